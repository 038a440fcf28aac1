"""Closed-form steady state of the single-threshold reinforced counter.

The counter is incremented by Poisson requests (rate ``lambda_``) and decremented by
exponential timer ticks (rate ``mu``); the content is cached while the counter exceeds ``K``.
Viewed as an M/M/1 queue, every metric below is an elementary function of rho = lambda/mu.
"""

import math
from dataclasses import dataclass

from pyrcn.errors import DomainError, UnstableCounterError
from pyrcn.utils import get_logger

RENEWAL_RTOL = 1e-12


@dataclass(frozen=True)
class CounterParams:
    lambda_: float
    mu: float
    K: float

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise DomainError(f"request rate must be > 0, got {self.lambda_}")
        if not self.mu > 0:
            raise DomainError(f"tick rate must be > 0, got {self.mu}")
        if not self.K >= 0:
            raise DomainError(f"threshold must be >= 0, got {self.K}")

    @property
    def rho(self) -> float:
        return self.lambda_ / self.mu

    def require_stable(self):
        if self.mu <= self.lambda_:
            raise UnstableCounterError(self.lambda_, self.mu)


@dataclass(frozen=True)
class SteadyState:
    pi_up: float
    rho: float
    gamma: float
    mean_busy: float
    mean_return: float

    def renewal_errors(self) -> dict[str, float]:
        """Relative errors of the three renewal identities."""
        cycle = self.mean_busy + self.mean_return
        return {
            "occupancy": abs(self.pi_up - self.mean_busy / cycle) / self.pi_up,
            "cycle": abs(self.gamma * cycle - 1.0),
            "return": abs(self.gamma * self.mean_return - (1.0 - self.pi_up)) / (1.0 - self.pi_up),
        }


@dataclass(frozen=True)
class TargetSpec:
    pi_up_target: float
    lambda_: float
    K: float

    def __post_init__(self):
        if not 0.0 < self.pi_up_target < 1.0:
            raise DomainError(f"target occupancy must lie in (0, 1), got {self.pi_up_target}")
        if not self.lambda_ > 0:
            raise DomainError(f"request rate must be > 0, got {self.lambda_}")
        if not self.K >= 0:
            raise DomainError(f"threshold must be >= 0, got {self.K}")


@dataclass(frozen=True)
class Provisioning:
    mu: float
    rho: float
    gamma: float
    mean_return: float

    def params(self, spec: TargetSpec) -> CounterParams:
        return CounterParams(spec.lambda_, self.mu, spec.K)


def occupancy_probability(params: CounterParams) -> float:
    """pi_up = rho^(K+1)"""
    params.require_stable()
    return params.rho ** (params.K + 1)


def mean_busy(params: CounterParams) -> float:
    """E[B] = 1/(mu - lambda), the M/M/1 busy period."""
    params.require_stable()
    return 1.0 / (params.mu - params.lambda_)


def mean_return(params: CounterParams) -> float:
    """E[R] = (1 - pi_up) / (pi_up (mu - lambda))"""
    params.require_stable()
    pi_up = params.rho ** (params.K + 1)
    return (1.0 - pi_up) / (pi_up * (params.mu - params.lambda_))


def replacement_rate(params: CounterParams) -> float:
    """gamma = lambda rho^K (1 - rho), the rate at which the content enters the cache."""
    params.require_stable()
    rho = params.rho
    return params.lambda_ * rho**params.K * (1.0 - rho)


def steady_state(params: CounterParams) -> SteadyState:
    state = SteadyState(
        pi_up=occupancy_probability(params),
        rho=params.rho,
        gamma=replacement_rate(params),
        mean_busy=mean_busy(params),
        mean_return=mean_return(params),
    )
    errors = state.renewal_errors()
    if max(errors.values()) > RENEWAL_RTOL:
        get_logger(__name__).warning(f"Renewal identities off for {params}: {errors}")
    return state


def provision_from_target(spec: TargetSpec) -> Provisioning:
    """Tick rate and derived metrics that hold pi_up at the target for the given K."""
    exponent = 1.0 / (spec.K + 1)
    rho = spec.pi_up_target**exponent
    # pi^(-1/(K+1)) - 1 loses digits for large K when formed directly
    excess = math.expm1(-math.log(spec.pi_up_target) * exponent)
    mu = spec.lambda_ * (1.0 + excess)
    gamma = spec.lambda_ * spec.pi_up_target * excess
    mean_ret = (1.0 - spec.pi_up_target) / (spec.pi_up_target * spec.lambda_ * excess)
    return Provisioning(mu=mu, rho=rho, gamma=gamma, mean_return=mean_ret)


def markov_tail_bound(mean_return: float, r: float) -> float:
    """Markov bound P(R > r) <= E[R]/r, clipped to 1."""
    if not r > 0:
        raise DomainError(f"tail point must be > 0, got {r}")
    return min(1.0, mean_return / r)


def randomized_threshold(K_real: float) -> tuple[int, int, float]:
    """Split a real threshold into the two neighbouring integers.

    Returns (K_low, K_high, weight) where weight is the probability of using K_high
    for a renewal cycle.
    """
    if not K_real >= 0:
        raise DomainError(f"threshold must be >= 0, got {K_real}")
    K_low = math.floor(K_real)
    weight = K_real - K_low
    if weight == 0.0:
        return K_low, K_low, 0.0
    return K_low, K_low + 1, weight
