"""Reinforced counter with hysteresis as an explicit continuous-time Markov chain.

A content enters the cache when its counter is incremented to K+1 and leaves when the
counter is decremented to K_h (0 <= K_h <= K). Counter values in (K_h, K] therefore exist
twice, once cached and once not. The absorbing sub-chains of this chain give the exact
laws of the residence time B and of the return time R, which serve as oracles for the
closed forms in :mod:`pyrcn.counter` and for the simulator.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve
from scipy.stats import poisson

from pyrcn.counter import CounterParams, randomized_threshold
from pyrcn.errors import DomainError, NumericError, TruncationError, UnstableCounterError
from pyrcn.utils import get_logger

TRUNCATION_MASS = 1e-12
UNIFORMIZATION_TAIL = 1e-10
CDF_CHUNK = 256


class Which(Enum):
    B = "B"
    R = "R"


@dataclass(frozen=True)
class HysteresisParams:
    lambda_: float
    mu: float
    K: int
    K_h: int

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise DomainError(f"request rate must be > 0, got {self.lambda_}")
        if not self.mu > 0:
            raise DomainError(f"tick rate must be > 0, got {self.mu}")
        if int(self.K) != self.K or int(self.K_h) != self.K_h:
            raise DomainError(f"thresholds must be integers, got K={self.K}, K_h={self.K_h}")
        if not 0 <= self.K_h <= self.K:
            raise DomainError(f"need 0 <= K_h <= K, got K={self.K}, K_h={self.K_h}")

    @property
    def rho(self) -> float:
        return self.lambda_ / self.mu

    @property
    def gap(self) -> int:
        return int(self.K - self.K_h)

    def require_stable(self):
        if self.mu <= self.lambda_:
            raise UnstableCounterError(self.lambda_, self.mu)

    @classmethod
    def from_counter(cls, params: CounterParams) -> "HysteresisParams":
        return cls(params.lambda_, params.mu, int(params.K), int(params.K))


@dataclass(frozen=True)
class ChainState:
    n: int
    cached: bool


@dataclass(frozen=True)
class HysteresisChain:
    params: HysteresisParams
    states: tuple[ChainState, ...]
    generator: sp.csr_matrix
    N_max: int

    def index(self, n: int, cached: bool) -> int:
        K, K_h = self.params.K, self.params.K_h
        if not cached:
            if not 0 <= n <= K:
                raise KeyError((n, cached))
            return n
        if not K_h < n <= self.N_max:
            raise KeyError((n, cached))
        return K + 1 + (n - K_h - 1)

    def cached_mask(self) -> np.ndarray:
        return np.array([s.cached for s in self.states])


@dataclass(frozen=True)
class PassageTimes:
    """Mean residence (nu) and return (xi) times; nu[i - 1] belongs to gap K - K_h = i - 1."""

    nu: tuple[float, ...]
    xi: tuple[float, ...]


@dataclass(frozen=True)
class PhaseType:
    alpha: np.ndarray
    T: sp.csr_matrix

    def moments(self) -> tuple[float, float]:
        A = (-self.T).tocsc()
        ones = np.ones(A.shape[0])
        x = _solve(A, ones)
        y = _solve(A, x)
        return float(self.alpha @ x), float(2.0 * (self.alpha @ y))


@dataclass(frozen=True)
class RandomizedOccupancy:
    pi_up: float
    gamma: float
    cycle_weighted: float
    convex_combination: float


class _GeneratorBuilder:
    def __init__(self, size):
        self.size = size
        self.rows = []
        self.cols = []
        self.rates = []

    def add(self, src, dst, rate):
        if src == dst or rate == 0.0:
            return
        self.rows.append(src)
        self.cols.append(dst)
        self.rates.append(rate)

    def build(self) -> sp.csr_matrix:
        Q = sp.coo_matrix((self.rates, (self.rows, self.cols)), shape=(self.size, self.size)).tocsr()
        out = np.asarray(Q.sum(axis=1)).ravel()
        return (Q - sp.diags(out)).tocsr()


def _solve(A, b):
    x = spsolve(A, b) if sp.issparse(A) else np.linalg.solve(A, b)
    if not np.all(np.isfinite(x)):
        raise NumericError("singular linear system")
    return x


def default_truncation(params: HysteresisParams, mass: float = TRUNCATION_MASS) -> int:
    params.require_stable()
    return int(params.K) + 1 + math.ceil(math.log(mass) / math.log(params.rho))


def build_chain(params: HysteresisParams, N_max: Optional[int] = None) -> HysteresisChain:
    """Explicit generator over (counter value, cached flag), truncated at N_max."""
    params.require_stable()
    if N_max is None:
        N_max = default_truncation(params)
    K, K_h = int(params.K), int(params.K_h)
    if N_max < K + 2:
        raise TruncationError(f"truncation level {N_max} must be at least K+2 = {K + 2}")

    states = tuple([ChainState(n, False) for n in range(K + 1)] + [ChainState(n, True) for n in range(K_h + 1, N_max + 1)])
    chain = HysteresisChain(params, states, sp.csr_matrix((len(states), len(states))), N_max)
    builder = _GeneratorBuilder(len(states))
    lam, mu = params.lambda_, params.mu
    for src, state in enumerate(states):
        n = state.n
        if not state.cached:
            builder.add(src, chain.index(n + 1, n == K), lam)
            if n >= 1:
                builder.add(src, chain.index(n - 1, False), mu)
        else:
            if n < N_max:
                builder.add(src, chain.index(n + 1, True), lam)
            builder.add(src, chain.index(n - 1, n - 1 > K_h), mu)

    get_logger(__name__).debug(f"Built hysteresis chain with {len(states)} states (N_max={N_max})")
    return HysteresisChain(params, states, builder.build(), N_max)


def stationary_distribution(generator: sp.csr_matrix) -> np.ndarray:
    A = generator.T.tolil()
    A[A.shape[0] - 1, :] = np.ones(A.shape[0])
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    pi = _solve(A.tocsc(), b)
    if np.min(pi) < -1e-9:
        raise NumericError("stationary solve produced negative mass")
    return np.clip(pi, 0.0, None)


def stationary_occupancy(chain: HysteresisChain) -> float:
    """Exact stationary probability that the content is cached."""
    pi = stationary_distribution(chain.generator)
    return float(pi[chain.cached_mask()].sum())


def first_passage_mean_busy(params: HysteresisParams) -> float:
    """E[B]: K - K_h + 1 consecutive M/M/1 busy periods."""
    params.require_stable()
    return (params.gap + 1) / (params.mu - params.lambda_)


def _return_phase_type(params: HysteresisParams) -> PhaseType:
    K, lam, mu = int(params.K), params.lambda_, params.mu
    builder = _GeneratorBuilder(K + 1)
    exit_rates = np.zeros(K + 1)
    for n in range(K + 1):
        if n < K:
            builder.add(n, n + 1, lam)
        else:
            exit_rates[n] = lam
        if n >= 1:
            builder.add(n, n - 1, mu)
    T = (builder.build() - sp.diags(exit_rates)).tocsr()
    alpha = np.zeros(K + 1)
    alpha[int(params.K_h)] = 1.0
    return PhaseType(alpha, T)


def _busy_phase_type(params: HysteresisParams, N_max: Optional[int] = None) -> PhaseType:
    if N_max is None:
        N_max = default_truncation(params)
    K, K_h, lam, mu = int(params.K), int(params.K_h), params.lambda_, params.mu
    levels = list(range(K_h + 1, N_max + 1))
    size = len(levels)
    builder = _GeneratorBuilder(size)
    exit_rates = np.zeros(size)
    for idx, n in enumerate(levels):
        if n < N_max:
            builder.add(idx, idx + 1, lam)
        if n - 1 > K_h:
            builder.add(idx, idx - 1, mu)
        else:
            exit_rates[idx] = mu
    T = (builder.build() - sp.diags(exit_rates)).tocsr()
    alpha = np.zeros(size)
    alpha[K + 1 - (K_h + 1)] = 1.0
    return PhaseType(alpha, T)


def phase_type(params: HysteresisParams, which: Which) -> PhaseType:
    if which is Which.B:
        params.require_stable()
        return _busy_phase_type(params)
    return _return_phase_type(params)


def first_passage_mean_return(params: HysteresisParams) -> float:
    """E[R]: expected time from (K_h, uncached) until the increment into K+1."""
    ph = _return_phase_type(params)
    A = (-ph.T).toarray()
    return float(ph.alpha @ _solve(A, np.ones(A.shape[0])))


def renewal_occupancy(params: HysteresisParams) -> float:
    nu = first_passage_mean_busy(params)
    return nu / (nu + first_passage_mean_return(params))


def closed_recursion_nu(params: HysteresisParams, up_to: int) -> list[float]:
    """nu(i) = 1/mu + nu(i-1) + rho nu(1), nu(1) = 1/(mu - lambda); element i-1 is nu(i)."""
    params.require_stable()
    nu = [1.0 / (params.mu - params.lambda_)]
    for _ in range(2, up_to + 1):
        nu.append(1.0 / params.mu + nu[-1] + params.rho * nu[0])
    return nu[:up_to]


def closed_recursion_xi(params: HysteresisParams, up_to: int) -> list[float]:
    """xi(i) = 1/lambda + xi(i-1) + xi(1)/rho with xi(1) = (1/lambda) sum_{j<=K} rho^-j.

    It is not the first-passage return time for gaps >= 1.
    """
    params.require_stable()
    rho = params.rho
    xi = [sum(rho ** (-j) for j in range(int(params.K) + 1)) / params.lambda_]
    for _ in range(2, up_to + 1):
        xi.append(1.0 / params.lambda_ + xi[-1] + xi[0] / rho)
    return xi[:up_to]


def closed_recursions(params: HysteresisParams, up_to: int) -> PassageTimes:
    return PassageTimes(tuple(closed_recursion_nu(params, up_to)), tuple(closed_recursion_xi(params, up_to)))


def oracle_passage_times(params: HysteresisParams, up_to: int) -> PassageTimes:
    """First-passage means for gaps 0 .. up_to-1 at the fixed insertion threshold K."""
    if up_to > params.K + 1:
        raise DomainError(f"gap can be at most K={params.K}, asked for {up_to} values")
    nu, xi = [], []
    for gap in range(up_to):
        p = HysteresisParams(params.lambda_, params.mu, params.K, params.K - gap)
        nu.append(first_passage_mean_busy(p))
        xi.append(first_passage_mean_return(p))
    return PassageTimes(tuple(nu), tuple(xi))


def xi_divergence_report(lambdas_mus: Sequence[tuple[float, float]], K_values: Sequence[int], rtol=1e-9):
    """Rows where the closed xi recursion departs from the first-passage oracle."""
    rows = []
    for lam, mu in lambdas_mus:
        for K in K_values:
            params = HysteresisParams(lam, mu, K, K)
            closed = closed_recursion_xi(params, K + 1)
            oracle = oracle_passage_times(params, K + 1).xi
            for gap, (p, o) in enumerate(zip(closed, oracle)):
                if abs(p - o) > rtol * abs(o):
                    rows.append(
                        {"lambda": lam, "mu": mu, "K": K, "K_h": K - gap, "xi_closed": p, "xi_oracle": o}
                    )
    return rows


def _survival(ph: PhaseType, times: np.ndarray) -> np.ndarray:
    rates = -ph.T.diagonal()
    unif = float(rates.max())
    out = np.ones_like(times)
    positive = np.flatnonzero(times > 0)
    if unif == 0.0 or positive.size == 0:
        return out
    P = (sp.identity(ph.T.shape[0], format="csr") + ph.T / unif).tocsr()
    k_max = int(poisson.isf(UNIFORMIZATION_TAIL, unif * float(times.max()))) + 2
    terms = np.empty(k_max + 1)
    v = np.ones(ph.T.shape[0])
    for k in range(k_max + 1):
        terms[k] = ph.alpha @ v
        v = P @ v
    ks = np.arange(k_max + 1)
    for start in range(0, positive.size, CDF_CHUNK):
        sel = positive[start : start + CDF_CHUNK]
        weights = poisson.pmf(ks[None, :], unif * times[sel][:, None])
        out[sel] = weights @ terms
    return np.clip(out, 0.0, 1.0)


def sojourn_cdf(params: HysteresisParams, which: Which, grid) -> np.ndarray:
    """CDF of B or R on the grid, by uniformization of the absorbing sub-chain."""
    times = np.atleast_1d(np.asarray(grid, dtype=float))
    if np.any(times < 0):
        raise DomainError("grid times must be >= 0")
    return 1.0 - _survival(phase_type(params, which), times)


def coefficient_of_variation(params: HysteresisParams, which: Which) -> float:
    m1, m2 = phase_type(params, which).moments()
    return math.sqrt(max(m2 - m1 * m1, 0.0)) / m1


def replacement_rate_hysteresis(params: HysteresisParams) -> float:
    """gamma = 1/(E[B] + E[R]) from the first-passage oracle."""
    return 1.0 / (first_passage_mean_busy(params) + first_passage_mean_return(params))


def retune_mu_for_target(pi_up_target: float, lambda_: float, K: int, K_h: int, mu_hi: Optional[float] = None) -> float:
    """Tick rate that holds the stationary occupancy at the target for the given thresholds."""
    if not 0.0 < pi_up_target < 1.0:
        raise DomainError(f"target occupancy must lie in (0, 1), got {pi_up_target}")

    def excess(mu):
        return renewal_occupancy(HysteresisParams(lambda_, mu, K, K_h)) - pi_up_target

    lo = lambda_ * (1.0 + 1e-12)
    hi = mu_hi if mu_hi is not None else 2.0 * lambda_
    for _ in range(200):
        if excess(hi) < 0.0:
            break
        if mu_hi is not None:
            raise NumericError(f"no root for occupancy {pi_up_target} in ({lo}, {mu_hi}]")
        hi *= 2.0
    else:
        raise NumericError(f"could not bracket occupancy {pi_up_target}")
    if excess(lo) <= 0.0:
        raise NumericError(f"no root for occupancy {pi_up_target} above mu = {lo}")
    mu = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    get_logger(__name__).debug(f"Retuned mu={mu} for pi_up={pi_up_target}, K={K}, K_h={K_h}")
    return float(mu)


def randomized_threshold_occupancy(lambda_: float, mu: float, K_real: float, N_max: Optional[int] = None):
    """Exact metrics of a counter whose threshold is redrawn at every eviction.

    The threshold of each renewal cycle is K_high with probability equal to the fractional
    part of K_real and K_low otherwise. While uncached, the content is inserted by the first
    increment that takes the counter above the current threshold; it is evicted by the
    decrement that brings the counter down to it.
    """
    K_low, K_high, weight = randomized_threshold(K_real)
    params = HysteresisParams(lambda_, mu, K_high, K_high)
    if N_max is None:
        N_max = default_truncation(params)
    thresholds = (K_low, K_high)
    draws = ((0, 1.0 - weight), (1, weight))
    width = N_max + 1

    def idx(n, cached, j):
        return (j * 2 + int(cached)) * width + n

    builder = _GeneratorBuilder(4 * width)
    insert_rate = np.zeros(4 * width)
    for j, K in enumerate(thresholds):
        for n in range(width):
            up = min(n + 1, N_max)
            src = idx(n, False, j)
            if up >= K + 1:
                builder.add(src, idx(up, True, j), lambda_)
                insert_rate[src] = lambda_
            else:
                builder.add(src, idx(up, False, j), lambda_)
            if n >= 1:
                builder.add(src, idx(n - 1, False, j), mu)

            src = idx(n, True, j)
            if n < N_max:
                builder.add(src, idx(n + 1, True, j), lambda_)
            if n >= 1:
                if n - 1 <= K:
                    for j_next, p in draws:
                        builder.add(src, idx(n - 1, False, j_next), mu * p)
                else:
                    builder.add(src, idx(n - 1, True, j), mu)

    pi = stationary_distribution(builder.build())
    cached = np.zeros(4 * width, dtype=bool)
    for j in range(2):
        cached[idx(0, True, j) : idx(0, True, j) + width] = True
    pi_up = float(pi[cached].sum())
    gamma = float(pi @ insert_rate)

    pure = [HysteresisParams(lambda_, mu, K, K) for K in thresholds]
    occupancy = [renewal_occupancy(p) for p in pure]
    cycles = [1.0 / replacement_rate_hysteresis(p) for p in pure]
    p_cycle = [1.0 - weight, weight]
    time_share = [p * c for p, c in zip(p_cycle, cycles)]
    cycle_weighted = sum(s * o for s, o in zip(time_share, occupancy)) / sum(time_share)
    convex = (1.0 - weight) * occupancy[0] + weight * occupancy[1]
    return RandomizedOccupancy(pi_up=pi_up, gamma=gamma, cycle_weighted=cycle_weighted, convex_combination=convex)


def scenario_table(lambda_: float, pi_up: float, K: int, K_h_values: Sequence[int], t: float = 4.0):
    """Retune mu for every K_h at fixed (lambda, pi_up, K) and collect the sojourn metrics."""
    log = get_logger(__name__)
    rows = []
    for K_h in K_h_values:
        mu = retune_mu_for_target(pi_up, lambda_, K, K_h)
        params = HysteresisParams(lambda_, mu, K, K_h)
        log.info(f"K_h={K_h}: mu={mu:.6g}")
        rows.append(
            {
                "K": K,
                "K_h": K_h,
                "mu": mu,
                "pi_up": renewal_occupancy(params),
                "gamma": replacement_rate_hysteresis(params),
                "mean_busy": first_passage_mean_busy(params),
                "mean_return": first_passage_mean_return(params),
                "cv_busy": coefficient_of_variation(params, Which.B),
                "cv_return": coefficient_of_variation(params, Which.R),
                "p_return_below_t": float(sojourn_cdf(params, Which.R, [t])[0]),
                "p_busy_above_t": float(1.0 - sojourn_cdf(params, Which.B, [t])[0]),
            }
        )
    return rows
