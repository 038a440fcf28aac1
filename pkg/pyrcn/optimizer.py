"""Threshold choice for a single reinforced counter at fixed occupancy.

With pi_up and lambda fixed, the tick rate follows from K, and the cost
psi(K) = alpha * gamma + beta * E[R] trades insertion churn against the time a missing
content needs to come back.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from pyrcn.errors import DomainError, InfeasibleConstraintError
from pyrcn.utils import get_logger

K_TOL = 1e-6
GRID_STEP = 1e-4
CONVEXITY_TOL = 1e-9
INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CostWeights:
    alpha: float
    beta: float
    K_max: float = 100.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise DomainError(f"cost weights must be >= 0, got alpha={self.alpha}, beta={self.beta}")
        if self.alpha == 0 and self.beta == 0:
            raise DomainError("cost weights alpha and beta cannot both be zero")
        if not self.K_max > 0:
            raise DomainError(f"K_max must be > 0, got {self.K_max}")


@dataclass
class ConvexityReport:
    pi_up: float
    phi_violations: list = field(default_factory=list)
    omega_violations: list = field(default_factory=list)
    delta_violations: list = field(default_factory=list)
    min_phi_second_diff: float = math.inf
    min_omega_second_diff: float = math.inf
    min_delta: float = math.inf

    @property
    def ok(self) -> bool:
        return not (self.phi_violations or self.omega_violations or self.delta_violations)


def _check(pi_up, lambda_):
    if not 0.0 < pi_up < 1.0:
        raise DomainError(f"pi_up must lie in (0, 1), got {pi_up}")
    if not lambda_ > 0:
        raise DomainError(f"request rate must be > 0, got {lambda_}")


def tick_excess(pi_up, K):
    """pi_up^(-1/(K+1)) - 1, vectorized over K."""
    return np.expm1(-np.log(pi_up) / (np.asarray(K, dtype=float) + 1.0))


def _psi(weights: CostWeights, pi_up, lambda_, K):
    x = tick_excess(pi_up, K)
    return weights.alpha * lambda_ * pi_up * x + weights.beta * (1.0 - pi_up) / (pi_up * lambda_ * x)


def objective(K: float, weights: CostWeights, pi_up: float, lambda_: float) -> float:
    """psi(K) = alpha lambda pi (pi^(-1/(K+1)) - 1) + beta (1 - pi) / (pi lambda (pi^(-1/(K+1)) - 1))"""
    _check(pi_up, lambda_)
    if not 0.0 <= K <= weights.K_max:
        raise DomainError(f"K must lie in [0, {weights.K_max}], got {K}")
    return float(_psi(weights, pi_up, lambda_, K))


def objective_derivative_beta0(K: float, weights: CostWeights, pi_up: float, lambda_: float) -> float:
    """d psi / dK for beta = 0; negative for every K, so psi decreases all the way to K_max."""
    _check(pi_up, lambda_)
    a = -math.log(pi_up)
    return -weights.alpha * lambda_ * pi_up * a / (K + 1.0) ** 2 * math.exp(a / (K + 1.0))


def cost_curve(weights: CostWeights, pi_up: float, lambda_: float, K_grid) -> np.ndarray:
    _check(pi_up, lambda_)
    K = np.asarray(K_grid, dtype=float)
    if np.any(K < 0) or np.any(K > weights.K_max):
        raise DomainError(f"K grid must lie in [0, {weights.K_max}]")
    return _psi(weights, pi_up, lambda_, K)


def grid_scan(weights: CostWeights, pi_up: float, lambda_: float, step: float = GRID_STEP) -> tuple[float, float]:
    """Brute-force minimum of psi over a uniform grid on [0, K_max]."""
    grid = np.arange(0.0, weights.K_max + step / 2, step)
    grid = grid[grid <= weights.K_max]
    costs = cost_curve(weights, pi_up, lambda_, grid)
    best = int(np.argmin(costs))
    return float(grid[best]), float(costs[best])


def golden_section(f, a: float, b: float, tol: float = K_TOL) -> float:
    """Minimizer of a unimodal f on [a, b]."""
    c = b - INV_GOLDEN * (b - a)
    d = a + INV_GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_GOLDEN * (b - a)
            fd = f(d)
    return (a + b) / 2


def minimize(weights: CostWeights, pi_up: float, lambda_: float) -> tuple[float, float]:
    """Optimal threshold K* and psi(K*)."""
    _check(pi_up, lambda_)
    log = get_logger(__name__)
    if weights.beta == 0:
        log.debug("beta = 0: psi decreases in K, taking K_max")
        return float(weights.K_max), objective(weights.K_max, weights, pi_up, lambda_)

    def f(K):
        return float(_psi(weights, pi_up, lambda_, K))

    K_star = golden_section(f, 0.0, float(weights.K_max))
    # the bracket ends are never evaluated by the search
    for end in (0.0, float(weights.K_max)):
        if f(end) < f(K_star):
            K_star = end
    log.debug(f"K*={K_star:.6g} for alpha={weights.alpha}, beta={weights.beta}, pi_up={pi_up}, lambda={lambda_}")
    return K_star, f(K_star)


def mean_return_at(K: float, pi_up: float, lambda_: float) -> float:
    return float((1.0 - pi_up) / (pi_up * lambda_ * tick_excess(pi_up, K)))


def minimize_with_return_cap(weights: CostWeights, pi_up: float, lambda_: float, R_star: float) -> float:
    """Optimal K subject to E[R](K) <= R_star."""
    _check(pi_up, lambda_)
    if not R_star > 0:
        raise DomainError(f"return-time cap must be > 0, got {R_star}")
    floor = mean_return_at(0.0, pi_up, lambda_)
    if R_star < floor:
        raise InfeasibleConstraintError(f"E[R] >= {floor:.6g} for every K, cap {R_star} cannot be met")

    K_star, _ = minimize(weights, pi_up, lambda_)
    if mean_return_at(K_star, pi_up, lambda_) <= R_star:
        return K_star
    # E[R] increases in K, so the cap binds below K*
    return float(brentq(lambda K: mean_return_at(K, pi_up, lambda_) - R_star, 0.0, K_star, xtol=1e-12))


def phi(pi_up, K):
    return np.exp(-np.log(pi_up) / (np.asarray(K, dtype=float) + 1.0))


def omega(pi_up, K):
    return 1.0 / tick_excess(pi_up, K)


def phi_second_derivative(pi_up: float, K):
    L = math.log(pi_up)
    K1 = np.asarray(K, dtype=float) + 1.0
    return -L * (2.0 * K1 - L) / (K1**4 * pi_up ** (1.0 / K1))


def convexity_delta(pi_up: float, K):
    """pi^(1/(K+1)) (2K - log pi + 2) - (2K + log pi + 2), rewritten around expm1."""
    L = math.log(pi_up)
    K1 = np.asarray(K, dtype=float) + 1.0
    e = np.expm1(L / K1)
    return 2.0 * K1 * e - L * (e + 2.0)


def verify_convexity(pi_up: float, K_grid) -> ConvexityReport:
    if not 0.0 < pi_up < 1.0:
        raise DomainError(f"pi_up must lie in (0, 1), got {pi_up}")
    K = np.asarray(K_grid, dtype=float)
    report = ConvexityReport(pi_up)
    if K.size >= 3:
        for name, values in (("phi", phi(pi_up, K)), ("omega", omega(pi_up, K))):
            second = values[:-2] - 2.0 * values[1:-1] + values[2:]
            bad = K[1:-1][second < -CONVEXITY_TOL]
            setattr(report, f"{name}_violations", bad.tolist())
            setattr(report, f"min_{name}_second_diff", float(second.min()))
    delta = convexity_delta(pi_up, K)
    report.delta_violations = K[delta < -CONVEXITY_TOL].tolist()
    report.min_delta = float(delta.min()) if delta.size else math.inf
    if not report.ok:
        get_logger(__name__).warning(f"Convexity violations for pi_up={pi_up}: {report}")
    return report
