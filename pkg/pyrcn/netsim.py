"""Discrete-event simulation of a cache network on simpy.

Exogenous requests arrive at every (cache, file) pair as Poisson streams. A request that
misses is forwarded to a uniformly chosen out-neighbour; a request that hits is absorbed.
Control-plane servers are FIFO single servers with exponential service at rate eta_i
(instantaneous when eta_i is unbounded).

Availability is either frozen (every visit finds the file with probability pi_ic,
independently) or live (a reinforced counter per pair, fed by the simulated requests, with a
real threshold split into a per-cycle random integer one).
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import simpy

from pyrcn.counter import randomized_threshold
from pyrcn.errors import DomainError
from pyrcn.network import AvailabilityProfile, CacheNetwork, CounterProvision, ServiceAccounting, solve_flow
from pyrcn.simulator import (
    ARRIVALS,
    AVAILABILITY,
    ROUTING,
    SERVICE,
    THRESHOLDS,
    TICKS,
    Estimate,
    HorizonKind,
    SimConfig,
    SimReport,
    batch_estimate,
    stream,
)
from pyrcn.utils import get_logger

MONITOR_POINTS = 400
UNSTABLE_SLOPE = 0.1


@dataclass
class LiveCounter:
    """Reinforced counter fed by simulated requests.

    A real threshold is split by randomized_threshold; each caching cycle draws its own
    integer threshold and eviction happens K_h_gap below it.
    """

    mu: float
    K_real: float
    K_h_gap: int = 0
    n: int = 0
    cached: bool = False
    updated: float = 0.0
    K: Optional[int] = None

    def __post_init__(self):
        self.K_low, self.K_high, self.weight = randomized_threshold(self.K_real)

    @property
    def K_h(self) -> int:
        return max(0, self.K - self.K_h_gap)

    def draw(self, rng: np.random.Generator):
        if self.weight == 0.0:
            self.K = self.K_low
        else:
            self.K = self.K_high if rng.random() < self.weight else self.K_low

    def advance(self, now: float, ticks: np.random.Generator, draws: np.random.Generator):
        """Apply the ticks since the last update; ticks only decrement, so the floor at 0 and
        the eviction test only depend on their number."""
        if self.K is None:
            self.draw(draws)
        if now > self.updated and (self.n > 0 or self.cached):
            self.n = max(0, self.n - int(ticks.poisson(self.mu * (now - self.updated))))
            if self.cached and self.n <= self.K_h:
                self.cached = False
                self.draw(draws)
        self.updated = now

    def request(self, now: float, ticks: np.random.Generator, draws: np.random.Generator) -> bool:
        self.advance(now, ticks, draws)
        self.n += 1
        if not self.cached and self.n >= self.K + 1:
            self.cached = True
        return self.cached


class _Always:
    def __init__(self, value):
        self.value = value

    def request(self, now, ticks, draws):
        return self.value


class NetworkSimulation:
    def __init__(self, net: CacheNetwork, availability, cfg: SimConfig, accounting: ServiceAccounting, replication=0):
        self.net = net
        self.cfg = cfg
        self.accounting = accounting
        self.env = simpy.Environment()
        self.arrivals = stream(cfg.seed, replication, ARRIVALS)
        self.routing = stream(cfg.seed, replication, ROUTING)
        self.availability = stream(cfg.seed, replication, AVAILABILITY)
        self.ticks = stream(cfg.seed, replication, TICKS)
        self.thresholds = stream(cfg.seed, replication, THRESHOLDS)
        self.service = stream(cfg.seed, replication, SERVICE)
        self.frozen = availability if isinstance(availability, AvailabilityProfile) else None
        self.counters = None if self.frozen is not None else availability
        self.servers = [
            None if math.isinf(net.eta[i]) else simpy.Resource(self.env, capacity=1) for i in range(net.C)
        ]
        self.neighbours = [np.flatnonzero(net.M[i]) for i in range(net.C)]
        self.visits: list[list[float]] = [[] for _ in range(net.C)]
        self.queue_samples: list[list[int]] = [[] for _ in range(net.C)]
        self.sample_times: list[float] = []
        self.absorbed = 0
        self.lost = 0
        self.sojourn: list[float] = []
        # per live counter: visit times and whether the visit found the file cached
        self.found: dict[tuple[int, int], tuple[list[float], list[bool]]] = {}

    def available(self, cache, content) -> bool:
        if self.frozen is not None:
            return bool(self.availability.random() < self.frozen.pi[cache, content])
        counter = self.counters[cache][content]
        if isinstance(counter, LiveCounter):
            counter.advance(self.env.now, self.ticks, self.thresholds)
            times, flags = self.found.setdefault((cache, content), ([], []))
            times.append(self.env.now)
            flags.append(counter.cached)
        return counter.request(self.env.now, self.ticks, self.thresholds)

    def needs_service(self, hit: bool) -> bool:
        if self.accounting is ServiceAccounting.TOTAL:
            return True
        return hit if self.accounting is ServiceAccounting.ABSORBED else not hit

    def serve(self, cache):
        with self.servers[cache].request() as req:
            yield req
            yield self.env.timeout(self.service.exponential(1.0 / self.net.eta[cache]))

    def request(self, cache, content):
        born = self.env.now
        while True:
            self.visits[cache].append(self.env.now)
            hit = self.available(cache, content)
            if self.servers[cache] is not None and self.needs_service(hit):
                yield self.env.process(self.serve(cache))
            if hit:
                self.absorbed += 1
                self.sojourn.append(self.env.now - born)
                return
            if self.neighbours[cache].size == 0:
                self.lost += 1
                return
            cache = int(self.routing.choice(self.neighbours[cache]))

    def source(self, cache, content, rate):
        while True:
            yield self.env.timeout(self.arrivals.exponential(1.0 / rate))
            self.env.process(self.request(cache, content))

    def monitor(self, every):
        while True:
            self.sample_times.append(self.env.now)
            for i, server in enumerate(self.servers):
                self.queue_samples[i].append(0 if server is None else len(server.queue) + server.count)
            yield self.env.timeout(every)

    def run(self, horizon: float):
        for i in range(self.net.C):
            for c in range(self.net.F):
                rate = self.net.lambda_ext[i, c]
                if rate > 0:
                    self.env.process(self.source(i, c, rate))
        self.env.process(self.monitor(horizon / MONITOR_POINTS))
        self.env.run(until=horizon)


def _rates(visits: Sequence[float], start: float, end: float, batches: int) -> Estimate:
    edges = np.linspace(start, end, batches + 1)
    counts, _ = np.histogram(np.asarray(visits), bins=edges)
    rates = counts / np.diff(edges)
    return Estimate(float(rates.mean()), float(rates.std(ddof=1) / math.sqrt(batches)))


def unstable_caches(sim: NetworkSimulation, eta: np.ndarray) -> list[int]:
    """Caches whose queue grows by more than 0.1 eta per unit time over the second half."""
    times = np.asarray(sim.sample_times)
    flagged: list[int] = []
    if times.size < 4:
        return flagged
    half = times >= times[-1] / 2
    for i, samples in enumerate(sim.queue_samples):
        if math.isinf(eta[i]):
            continue
        slope = np.polyfit(times[half], np.asarray(samples, dtype=float)[half], 1)[0]
        if slope > UNSTABLE_SLOPE * eta[i]:
            flagged.append(i)
    return flagged


def live_counters(net: CacheNetwork, provisions: Sequence[CounterProvision], K_h_gap: int = 0):
    """Per (cache, file) availability for a live simulation; provisioned pairs keep their real K."""
    if K_h_gap < 0:
        raise DomainError(f"K_h_gap must be >= 0, got {K_h_gap}")
    table: list[list] = [[_Always(False) for _ in range(net.F)] for _ in range(net.C)]
    for p in provisions:
        if p.status == "pinned":
            table[p.cache][p.content] = _Always(True)
        elif p.status == "counter":
            table[p.cache][p.content] = LiveCounter(p.params.mu, p.params.K, K_h_gap)
    return table


def _occupancy(times: Sequence[float], flags: Sequence[bool], start: float, batches: int) -> Estimate:
    after = np.asarray(times) >= start
    found = np.asarray(flags, dtype=float)[after]
    return batch_estimate(found, np.ones_like(found), min(batches, max(found.size, 1)))


def simulate_network(
    net: CacheNetwork,
    profile_or_counters: Union[AvailabilityProfile, Sequence[CounterProvision]],
    cfg: SimConfig = SimConfig(horizon=2000.0, horizon_kind=HorizonKind.TIME),
    accounting: ServiceAccounting = ServiceAccounting.TOTAL,
    pi_targets: Optional[AvailabilityProfile] = None,
    K_h_gap: int = 0,
) -> SimReport:
    """Simulate the network and estimate the per-cache input rates alpha_i.

    With counters instead of a frozen profile, ``pi_targets`` (the targets the counters were
    provisioned for) lets the report carry the gap to the mean-field flow solution, and every
    counter gets an occupancy estimate ``pi_<cache>_<file>``: the fraction of visits that found
    the file cached.
    """
    if net.total_demand <= 0:
        raise DomainError("network has no exogenous demand to simulate")
    horizon = cfg.horizon if cfg.horizon_kind is HorizonKind.TIME else cfg.horizon / net.total_demand
    log = get_logger(__name__)
    if isinstance(profile_or_counters, AvailabilityProfile):
        availability = profile_or_counters
        mode = "frozen"
    else:
        availability = live_counters(net, profile_or_counters, K_h_gap)
        mode = "live"
    log.info(f"Simulating {net.C} caches, {net.F} files over t={horizon:g} ({mode} availability)")

    sim = NetworkSimulation(net, availability, cfg, accounting)
    sim.run(horizon)

    start = cfg.warmup * horizon
    report = SimReport(events=int(sum(len(v) for v in sim.visits)))
    estimates = [_rates(v, start, horizon, cfg.batches) for v in sim.visits]
    report.alpha = np.array([e.value for e in estimates])
    report.alpha_stderr = np.array([e.stderr for e in estimates])
    if len(sim.sojourn) > 1:
        sojourn = np.asarray(sim.sojourn)
        report.estimates["mean_response"] = Estimate(
            float(sojourn.mean()), float(sojourn.std(ddof=1) / math.sqrt(sojourn.size))
        )
    for (i, c), (times, flags) in sorted(sim.found.items()):
        report.estimates[f"pi_{i + 1}_{c + 1}"] = _occupancy(times, flags, start, cfg.batches)
    report.extra.update({"absorbed": sim.absorbed, "lost": sim.lost, "mode": mode})
    for i in unstable_caches(sim, net.eta):
        report.flags.append(f"empirically unstable: cache {i + 1}")
    if report.flags:
        log.warning(", ".join(report.flags))
    if mode == "live" and pi_targets is not None:
        flow = solve_flow(net, pi_targets)
        report.extra["flow_gap"] = (report.alpha - flow.alpha_cache).tolist()
    return report
