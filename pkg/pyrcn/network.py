"""Cache networks with random-walk forwarding of misses.

Caches are numbered 0..C-1 and files 0..F-1 inside the package; files on disk and messages
use 1-based ids. Unbounded capacities and service rates are encoded as ``UNBOUNDED``
(``math.inf``).
"""

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from pyrcn.counter import CounterParams, TargetSpec, occupancy_probability, provision_from_target
from pyrcn.errors import DomainError, NumericError, SinkWithoutStorageError, UnplacedContentError
from pyrcn.optimizer import CostWeights, minimize
from pyrcn.utils import get_logger

UNBOUNDED = math.inf
RESIDUAL_RTOL = 1e-10
STABILITY_ATOL = 1e-12
SINGULAR_GROWTH = 1e12


class FlowMode(Enum):
    # alpha_i counts every request entering cache i
    VERBATIM = "verbatim_flow"
    # alpha_ij counts only requests that miss at i: alpha_ij = (1 - A_ij)(lambda_ij + sum_k alpha_kj p_ki)
    MIQCP = "miqcp_flow"


class ServiceAccounting(Enum):
    TOTAL = "total"
    MISSES = "misses"
    ABSORBED = "absorbed"


@dataclass(frozen=True, eq=False)
class CacheNetwork:
    M: np.ndarray
    s: np.ndarray
    eta: np.ndarray
    lambda_ext: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "M", np.asarray(self.M, dtype=int))
        for name in ("s", "eta", "lambda_ext", "t"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        C, F = self.lambda_ext.shape
        if self.M.shape != (C, C) or self.s.shape != (C,) or self.eta.shape != (C,) or self.t.shape != (F,):
            raise DomainError(f"inconsistent network dimensions for C={C}, F={F}")
        if not np.isin(self.M, (0, 1)).all():
            raise DomainError("adjacency matrix must be 0/1")
        if np.any(np.diag(self.M)):
            raise DomainError(f"self-loop at cache {int(np.flatnonzero(np.diag(self.M))[0]) + 1}")
        if np.any(self.lambda_ext < 0) or not np.all(np.isfinite(self.lambda_ext)):
            raise DomainError("exogenous rates must be finite and >= 0")
        if np.any(self.s < 0):
            raise DomainError("storage capacities must be >= 0")
        if np.any(self.eta <= 0):
            raise DomainError("service rates must be > 0")
        if np.any(self.t <= 0) or not np.all(np.isfinite(self.t)):
            raise DomainError("file sizes must be finite and > 0")

    @property
    def C(self) -> int:
        return self.M.shape[0]

    @property
    def F(self) -> int:
        return self.t.shape[0]

    @property
    def out_degree(self) -> np.ndarray:
        return self.M.sum(axis=1)

    @property
    def total_demand(self) -> float:
        return float(self.lambda_ext.sum())


@dataclass(frozen=True, eq=False)
class AvailabilityProfile:
    pi: np.ndarray
    static: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        if self.pi.ndim != 2:
            raise DomainError("availability must be a cache x file matrix")
        if np.any(self.pi < 0) or np.any(self.pi > 1):
            raise DomainError("availabilities must lie in [0, 1]")
        if self.static and not np.isin(self.pi, (0.0, 1.0)).all():
            raise DomainError("static availability must be binary")

    @classmethod
    def from_placement(cls, A) -> "AvailabilityProfile":
        return cls(np.asarray(A, dtype=float), static=True)


@dataclass(frozen=True, eq=False)
class FlowSolution:
    alpha: np.ndarray
    pi: np.ndarray
    mode: FlowMode
    stable: bool
    EN: float
    ET: float

    @property
    def alpha_cache(self) -> np.ndarray:
        return self.alpha.sum(axis=1)

    def service_load(self, accounting: ServiceAccounting = ServiceAccounting.TOTAL) -> np.ndarray:
        if self.mode is FlowMode.MIQCP or accounting is ServiceAccounting.TOTAL:
            return self.alpha_cache
        if accounting is ServiceAccounting.MISSES:
            return (self.alpha * (1.0 - self.pi)).sum(axis=1)
        return (self.alpha * self.pi).sum(axis=1)


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    slack: np.ndarray = field(compare=False)


@dataclass(frozen=True)
class FixedK:
    K: float


@dataclass(frozen=True)
class OptimizedK:
    weights: CostWeights


@dataclass(frozen=True)
class CounterProvision:
    cache: int
    content: int
    pi_target: float
    arrival_rate: float
    status: str
    params: Optional[CounterParams] = None


@dataclass(frozen=True)
class OccupancyReport:
    expected: np.ndarray
    overflow: np.ndarray
    exact: bool


def _check_profile(net: CacheNetwork, profile: AvailabilityProfile):
    if profile.pi.shape != (net.C, net.F):
        raise DomainError(f"availability is {profile.pi.shape}, network needs {(net.C, net.F)}")


def _reached(net: CacheNetwork, pi_c: np.ndarray, lambda_c: np.ndarray) -> np.ndarray:
    """Caches that requests for one content can visit."""
    seen = lambda_c > 0
    queue = deque(np.flatnonzero(seen))
    while queue:
        h = queue.popleft()
        if pi_c[h] >= 1.0:
            continue
        for i in np.flatnonzero(net.M[h]):
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return seen


def _check_sinks(net: CacheNetwork, pi_c: np.ndarray, lambda_c: np.ndarray):
    reached = _reached(net, pi_c, lambda_c)
    sinks = np.flatnonzero(reached & (net.out_degree == 0) & (pi_c < 1.0))
    if sinks.size:
        raise SinkWithoutStorageError(int(sinks[0]))


def routing_matrix(net: CacheNetwork, profile: Optional[AvailabilityProfile] = None) -> np.ndarray:
    """p_hi = 1/d_h on the edges of h. With a profile, caches that can miss must forward."""
    degree = net.out_degree
    P = np.zeros((net.C, net.C))
    has_edges = degree > 0
    P[has_edges] = net.M[has_edges] / degree[has_edges, None]
    if profile is not None:
        _check_profile(net, profile)
        for c in range(net.F):
            _check_sinks(net, profile.pi[:, c], net.lambda_ext[:, c])
    return P


def _solve_content(c, P, pi_c, lambda_c, mode):
    if not np.any(lambda_c > 0):
        return np.zeros_like(lambda_c)
    miss = np.diag(1.0 - pi_c)
    eye = np.eye(len(lambda_c))
    if mode is FlowMode.VERBATIM:
        A, b = eye - P.T @ miss, lambda_c
    else:
        A, b = eye - miss @ P.T, miss @ lambda_c
    try:
        alpha = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise UnplacedContentError(c) from None
    scale = max(float(np.linalg.norm(lambda_c)), 1e-300)
    if not np.all(np.isfinite(alpha)) or np.linalg.norm(A @ alpha - b) > RESIDUAL_RTOL * scale:
        raise UnplacedContentError(c)
    # a numerically singular system shows up as an exploding solution
    if np.max(np.abs(alpha)) > SINGULAR_GROWTH * scale:
        raise UnplacedContentError(c)
    if mode is FlowMode.VERBATIM:
        # requests enter at least with their exogenous rate
        return np.maximum(alpha, lambda_c)
    return np.maximum(alpha, 0.0)


def content_flow(
    net: CacheNetwork, c: int, pi_c, mode: FlowMode = FlowMode.VERBATIM, P: Optional[np.ndarray] = None
) -> np.ndarray:
    """Solved input rates of one content at every cache."""
    pi_c = np.asarray(pi_c, dtype=float)
    if P is None:
        P = routing_matrix(net)
    _check_sinks(net, pi_c, net.lambda_ext[:, c])
    return _solve_content(c, P, pi_c, net.lambda_ext[:, c], mode)


def solve_flow(
    net: CacheNetwork,
    profile: AvailabilityProfile,
    mode: FlowMode = FlowMode.VERBATIM,
    workers: int = 1,
    queue_length: bool = False,
) -> FlowSolution:
    """Per-content flow balance alpha = lambda_c + P^T diag(1 - pi_c) alpha."""
    _check_profile(net, profile)
    log = get_logger(__name__)
    log.debug(f"Solving flow for {net.F} contents on {net.C} caches ({mode.value})")
    P = routing_matrix(net)

    def job(c):
        return content_flow(net, c, profile.pi[:, c], mode, P)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            columns = list(executor.map(job, range(net.F)))
    else:
        columns = [job(c) for c in range(net.F)]
    alpha = np.column_stack(columns) if columns else np.zeros((net.C, 0))

    stable = bool(np.all(net.eta > alpha.sum(axis=1)))
    partial = FlowSolution(alpha, profile.pi, mode, stable, math.nan, math.nan)
    if net.total_demand > 0:
        EN, ET = response_time(net, partial, queue_length=queue_length)
    else:
        EN, ET = 0.0, math.nan
    log.debug(f"alpha per cache: {alpha.sum(axis=1)}")
    return FlowSolution(alpha, profile.pi, mode, stable, EN, ET)


def stability(
    net: CacheNetwork,
    solution: FlowSolution,
    accounting: ServiceAccounting = ServiceAccounting.TOTAL,
    strict: bool = True,
) -> StabilityReport:
    """eta_i > load_i for every cache (or >= when strict is False); slack = eta - load."""
    load = solution.service_load(accounting)
    slack = net.eta - load
    if strict:
        ok = bool(np.all(slack > 0))
    else:
        ok = bool(np.all(slack >= -STABILITY_ATOL * np.maximum(1.0, np.where(np.isinf(load), 1.0, load))))
    return StabilityReport(ok, slack)


def response_time(net: CacheNetwork, solution: FlowSolution, queue_length: bool = False) -> tuple[float, float]:
    """E[N] = sum_i alpha_i / eta_i and E[T] = E[N] / Lambda.

    With queue_length the M/M/1 mean number in system rho_i / (1 - rho_i) is used instead
    (infinite for a saturated cache).
    """
    Lambda = net.total_demand
    if not Lambda > 0:
        raise DomainError("total exogenous demand is zero, E[T] is undefined")
    rho = solution.alpha_cache / net.eta
    if queue_length:
        per_cache = np.where(rho < 1.0, rho / np.where(rho < 1.0, 1.0 - rho, 1.0), math.inf)
    else:
        per_cache = rho
    EN = float(per_cache.sum())
    return EN, EN / Lambda


def _poisson_binomial(probabilities: np.ndarray) -> np.ndarray:
    dist = np.zeros(len(probabilities) + 1)
    dist[0] = 1.0
    for k, p in enumerate(probabilities, start=1):
        dist[1 : k + 1] = dist[1 : k + 1] * (1.0 - p) + dist[:k] * p
        dist[0] *= 1.0 - p
    return dist


def expected_occupancy(
    profile: AvailabilityProfile, net: CacheNetwork, samples: int = 20000, seed: int = 0
) -> OccupancyReport:
    """Expected storage per cache and P(occupancy > s_i).

    Exact through a Poisson-binomial convolution when every file has unit size, Monte Carlo
    otherwise.
    """
    _check_profile(net, profile)
    pi = profile.pi
    expected = pi @ net.t
    overflow = np.zeros(net.C)
    exact = bool(np.all(net.t == 1.0))
    if exact:
        for i in range(net.C):
            if math.isinf(net.s[i]):
                continue
            dist = _poisson_binomial(pi[i])
            overflow[i] = float(dist[int(math.floor(net.s[i])) + 1 :].sum())
    else:
        get_logger(__name__).info(f"Non-unit file sizes, estimating overflow from {samples} samples")
        rng = np.random.default_rng(seed)
        for i in range(net.C):
            if math.isinf(net.s[i]):
                continue
            stored = rng.random((samples, net.F)) < pi[i]
            overflow[i] = float(np.mean(stored @ net.t > net.s[i]))
    return OccupancyReport(expected, overflow, exact)


def provision_network(
    net: CacheNetwork, pi_targets: AvailabilityProfile, K_policy: Union[FixedK, OptimizedK]
) -> list[CounterProvision]:
    """Counter parameters for every (cache, content) pair that needs one.

    Entries with target 1 are pinned replicas and entries with target 0 are absent; neither
    gets a counter. A pair that receives no traffic is reported as idle.
    """
    solution = solve_flow(net, pi_targets)
    log = get_logger(__name__)
    out = []
    for i in range(net.C):
        for c in range(net.F):
            target = float(pi_targets.pi[i, c])
            rate = float(solution.alpha[i, c])
            if target >= 1.0:
                out.append(CounterProvision(i, c, target, rate, "pinned"))
                continue
            if target <= 0.0:
                out.append(CounterProvision(i, c, target, rate, "absent"))
                continue
            if rate <= 0.0:
                out.append(CounterProvision(i, c, target, rate, "idle"))
                continue
            if isinstance(K_policy, FixedK):
                K = K_policy.K
            else:
                K, _ = minimize(K_policy.weights, target, rate)
            spec = TargetSpec(target, rate, K)
            params = provision_from_target(spec).params(spec)
            if abs(occupancy_probability(params) - target) > 1e-10:
                raise NumericError(f"occupancy round-trip failed at cache {i + 1}, file {c + 1}")
            out.append(CounterProvision(i, c, target, rate, "counter", params))
    log.info(f"Provisioned {sum(p.status == 'counter' for p in out)} counters")
    return out
