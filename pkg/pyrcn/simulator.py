"""Event-driven simulation of one reinforced counter.

Requests and timer ticks are two independent Poisson streams, each drawn from its own
generator so the streams never perturb one another. A tick at counter value 0 is lost.
The request whose increment inserts the content is counted as a hit.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from pyrcn.counter import CounterParams, randomized_threshold
from pyrcn.errors import DomainError
from pyrcn.hysteresis import HysteresisParams, randomized_threshold_occupancy
from pyrcn.utils import get_logger

CHUNK = 1 << 16

# stream indices; new sources get new indices
ARRIVALS = 0
TICKS = 1
THRESHOLDS = 2
ROUTING = 3
AVAILABILITY = 4
SERVICE = 5


class HorizonKind(Enum):
    EVENTS = "events"
    TIME = "time"


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    horizon: float = 1e6
    horizon_kind: HorizonKind = HorizonKind.EVENTS
    warmup: float = 0.2
    replications: int = 1
    batches: int = 30
    workers: int = 1

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError(f"horizon must be > 0, got {self.horizon}")
        if not 0.0 <= self.warmup < 1.0:
            raise DomainError(f"warmup must lie in [0, 1), got {self.warmup}")
        if self.replications < 1:
            raise DomainError(f"need at least one replication, got {self.replications}")
        if self.batches < 2:
            raise DomainError(f"need at least two batches, got {self.batches}")


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.stderr


@dataclass
class SimReport:
    estimates: dict = field(default_factory=dict)
    busy_samples: np.ndarray = field(default_factory=lambda: np.empty(0))
    return_samples: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha: Optional[np.ndarray] = None
    alpha_stderr: Optional[np.ndarray] = None
    events: int = 0
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        rows = [{"metric": name, "estimate": e.value, "stderr": e.stderr} for name, e in self.estimates.items()]
        if self.alpha is not None:
            for i, (a, se) in enumerate(zip(self.alpha, self.alpha_stderr)):
                rows.append({"metric": f"alpha_{i + 1}", "estimate": float(a), "stderr": float(se)})
        return rows

    def ecdf(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        samples = np.sort(self.busy_samples if which == "B" else self.return_samples)
        return samples, np.arange(1, samples.size + 1) / max(samples.size, 1)


def stream(seed: int, replication: int, source: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication, source)))


class ExponentialStream:
    """Exponential variates drawn in blocks."""

    def __init__(self, rng: np.random.Generator, rate: float):
        self.rng = rng
        self.scale = 1.0 / rate
        self.block = np.empty(0)
        self.pos = 0

    def next(self) -> float:
        if self.pos == self.block.size:
            self.block = self.rng.exponential(self.scale, CHUNK)
            self.pos = 0
        self.pos += 1
        return float(self.block[self.pos - 1])


def batch_estimate(numerators: np.ndarray, denominators: np.ndarray, batches: int) -> Estimate:
    total = float(denominators.sum())
    if total == 0.0:
        return Estimate(math.nan, math.nan)
    value = float(numerators.sum()) / total
    splits = zip(np.array_split(numerators, batches), np.array_split(denominators, batches))
    parts = [(n.sum(), d.sum()) for n, d in splits]
    ratios = np.array([n / d for n, d in parts if d > 0])
    if ratios.size < 2:
        return Estimate(value, math.nan)
    return Estimate(value, float(ratios.std(ddof=1) / math.sqrt(ratios.size)))


def _sample_estimate(samples: np.ndarray) -> Estimate:
    if samples.size < 2:
        return Estimate(math.nan, math.nan)
    return Estimate(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size)))


def _run_counter(lambda_, mu, thresholds, weight, K_h_offset, cfg: SimConfig, replication: int) -> SimReport:
    """One replication. The insertion threshold of each cycle is thresholds[1] with probability
    weight, thresholds[0] otherwise; eviction happens at the cycle threshold minus K_h_offset."""
    arrivals = ExponentialStream(stream(cfg.seed, replication, ARRIVALS), lambda_)
    ticks = ExponentialStream(stream(cfg.seed, replication, TICKS), mu)
    draws = stream(cfg.seed, replication, THRESHOLDS)

    def draw_threshold():
        if weight == 0.0:
            return thresholds[0]
        return thresholds[1] if draws.random() < weight else thresholds[0]

    by_events = cfg.horizon_kind is HorizonKind.EVENTS
    limit = int(cfg.horizon) if by_events else cfg.horizon
    times, states, inserts, hits = [], [], [], []
    busy, ret = [], []

    now, n, cached = 0.0, 0, False
    K = draw_threshold()
    last_change = 0.0
    seen_eviction = False
    next_arrival, next_tick = arrivals.next(), ticks.next()
    count = 0
    while True:
        if next_arrival <= next_tick:
            now = next_arrival
            if not by_events and now > limit:
                break
            n += 1
            inserted = not cached and n >= K + 1
            if inserted:
                cached = True
                if seen_eviction:
                    ret.append((last_change, now - last_change))
                last_change = now
            next_arrival = now + arrivals.next()
            hit = 1 if cached else 0
        else:
            now = next_tick
            if not by_events and now > limit:
                break
            inserted, hit = False, -1
            if n > 0:
                n -= 1
                if cached and n <= K - K_h_offset:
                    cached = False
                    busy.append((last_change, now - last_change))
                    last_change = now
                    seen_eviction = True
                    K = draw_threshold()
            next_tick = now + ticks.next()
        times.append(now)
        states.append(cached)
        inserts.append(inserted)
        hits.append(hit)
        count += 1
        if by_events and count >= limit:
            break

    end = limit if not by_events else now
    times_arr = np.array(times + [end])
    states_arr = np.array(states, dtype=bool)
    inserts_arr = np.array(inserts, dtype=bool)
    hits_arr = np.array(hits, dtype=int)
    if by_events:
        start = int(cfg.warmup * count)
    else:
        start = int(np.searchsorted(times_arr[:-1], cfg.warmup * cfg.horizon))
    cutoff = times_arr[start] if start < count else end
    dt = np.diff(times_arr)[start:]
    cached_time = dt * states_arr[start:]
    # an insertion at event k counts in the interval starting at k
    ins = inserts_arr[start:].astype(float)
    requests = hits_arr[start:] >= 0

    report = SimReport(events=count)
    report.estimates["pi_up"] = batch_estimate(cached_time, dt, cfg.batches)
    report.estimates["gamma"] = batch_estimate(ins, dt, cfg.batches)
    found = (hits_arr[start:] == 1).astype(float)
    report.estimates["hit_ratio"] = batch_estimate(found, requests.astype(float), cfg.batches)
    report.busy_samples = np.array([d for t0, d in busy if t0 >= cutoff])
    report.return_samples = np.array([d for t0, d in ret if t0 >= cutoff])
    report.estimates["mean_busy"] = _sample_estimate(report.busy_samples)
    report.estimates["mean_return"] = _sample_estimate(report.return_samples)
    return report


def _merge(reports: list[SimReport]) -> SimReport:
    if len(reports) == 1:
        return reports[0]
    merged = SimReport(events=sum(r.events for r in reports))
    for name in reports[0].estimates:
        values = np.array([r.estimates[name].value for r in reports])
        merged.estimates[name] = Estimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size)))
    merged.busy_samples = np.concatenate([r.busy_samples for r in reports])
    merged.return_samples = np.concatenate([r.return_samples for r in reports])
    for r in reports:
        merged.flags.extend(f for f in r.flags if f not in merged.flags)
    return merged


def _replication(args):
    return _run_counter(*args)


def _replicate(lambda_, mu, thresholds, weight, K_h_offset, cfg: SimConfig) -> SimReport:
    jobs = [(lambda_, mu, thresholds, weight, K_h_offset, cfg, r) for r in range(cfg.replications)]
    if cfg.workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as executor:
            reports = list(executor.map(_replication, jobs))
    else:
        reports = [_replication(job) for job in jobs]
    return _merge(reports)


def simulate_counter(params: Union[CounterParams, HysteresisParams], cfg: SimConfig = SimConfig()) -> SimReport:
    """Simulate a single-threshold or hysteresis counter."""
    if isinstance(params, HysteresisParams):
        K, offset = int(params.K), int(params.K - params.K_h)
    else:
        if int(params.K) != params.K:
            raise DomainError(f"simulated thresholds must be integers, got K={params.K}; use simulate_fractional_K")
        K, offset = int(params.K), 0
    get_logger(__name__).info(
        f"Simulating counter lambda={params.lambda_}, mu={params.mu}, K={K}, K_h={K - offset} "
        f"({cfg.horizon:g} {cfg.horizon_kind.value}, {cfg.replications} replications)"
    )
    return _replicate(params.lambda_, params.mu, (K, K), 0.0, offset, cfg)


def simulate_fractional_K(K_real: float, lambda_: float, mu: float, cfg: SimConfig = SimConfig()) -> SimReport:
    """Counter whose threshold is redrawn between floor(K_real) and ceil(K_real) at every eviction.

    The exact occupancy of this policy and the cycle-weighted mixture of the two integer
    policies are attached under ``extra``.
    """
    K_low, K_high, weight = randomized_threshold(K_real)
    get_logger(__name__).info(f"Simulating K={K_real}: K={K_high} with probability {weight:g}, else K={K_low}")
    report = _replicate(lambda_, mu, (K_low, K_high), weight, 0, cfg)
    if mu > lambda_:
        exact = randomized_threshold_occupancy(lambda_, mu, K_real)
        report.extra.update(
            {
                "pi_up_exact": exact.pi_up,
                "gamma_exact": exact.gamma,
                "pi_up_cycle_weighted": exact.cycle_weighted,
                "pi_up_convex_combination": exact.convex_combination,
            }
        )
    return report
