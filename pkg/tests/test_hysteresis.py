import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from pyrcn.counter import CounterParams, occupancy_probability
from pyrcn.errors import DomainError, TruncationError, UnstableCounterError
from pyrcn.hysteresis import (
    HysteresisParams,
    Which,
    build_chain,
    closed_recursion_nu,
    closed_recursion_xi,
    coefficient_of_variation,
    first_passage_mean_busy,
    first_passage_mean_return,
    oracle_passage_times,
    phase_type,
    randomized_threshold_occupancy,
    renewal_occupancy,
    replacement_rate_hysteresis,
    retune_mu_for_target,
    scenario_table,
    sojourn_cdf,
    stationary_occupancy,
    xi_divergence_report,
)


def test_chain_size():
    assert len(build_chain(HysteresisParams(1.0, 2.0, 1, 0), N_max=40).states) == 42
    assert len(build_chain(HysteresisParams(1.0, 2.0, 3, 3), N_max=40).states) == 41


def test_chain_generator_rows_sum_to_zero():
    chain = build_chain(HysteresisParams(1.0, 2.0, 4, 1), N_max=30)
    np.testing.assert_allclose(np.asarray(chain.generator.sum(axis=1)).ravel(), 0.0, atol=1e-12)
    assert chain.cached_mask().sum() == 30 - 1


def test_chain_index():
    chain = build_chain(HysteresisParams(1.0, 2.0, 2, 1), N_max=10)
    assert chain.states[chain.index(2, False)].n == 2
    assert chain.states[chain.index(2, True)].cached
    with pytest.raises(KeyError):
        chain.index(1, True)


def test_truncation_too_small():
    with pytest.raises(TruncationError):
        build_chain(HysteresisParams(1.0, 2.0, 3, 1), N_max=4)


def test_unstable_chain():
    with pytest.raises(UnstableCounterError):
        build_chain(HysteresisParams(2.0, 1.0, 1, 0))


@pytest.mark.parametrize("K, K_h", [(2, 3), (2, -1)])
def test_invalid_thresholds(K, K_h):
    with pytest.raises(DomainError):
        HysteresisParams(1.0, 2.0, K, K_h)


@pytest.mark.parametrize(
    "lambda_, mu, K, K_h, expected",
    [(1.0, 2.0, 1, 1, 0.25), (1.0, 2.0, 1, 0, 1.0 / 3.0), (1.0, 1.05, 1, 1, 0.90702947845805)],
)
def test_stationary_occupancy(lambda_, mu, K, K_h, expected):
    chain = build_chain(HysteresisParams(lambda_, mu, K, K_h))
    assert stationary_occupancy(chain) == pytest.approx(expected, rel=1e-6)


@pytest.mark.parametrize("lambda_, mu, K, K_h", [(1.0, 2.0, 3, 1), (2.0, 3.0, 5, 0), (0.5, 0.6, 4, 4), (1.0, 1.5, 6, 3)])
def test_stationary_matches_renewal(lambda_, mu, K, K_h):
    params = HysteresisParams(lambda_, mu, K, K_h)
    assert stationary_occupancy(build_chain(params)) == pytest.approx(renewal_occupancy(params), rel=1e-8)


@pytest.mark.parametrize("lambda_, mu, K", [(1.0, 2.0, 0), (1.0, 2.0, 1), (3.0, 4.0, 7)])
def test_no_band_matches_closed_form(lambda_, mu, K):
    params = HysteresisParams(lambda_, mu, K, K)
    assert renewal_occupancy(params) == pytest.approx(occupancy_probability(CounterParams(lambda_, mu, K)), rel=1e-10)


def test_first_passage_means():
    params = HysteresisParams(1.0, 2.0, 1, 0)
    assert first_passage_mean_busy(params) == pytest.approx(2.0)
    assert first_passage_mean_return(params) == pytest.approx(4.0)
    assert first_passage_mean_return(HysteresisParams(1.0, 2.0, 1, 1)) == pytest.approx(3.0)


def test_mean_return_without_stability():
    # the return phase only lives on {0..K}
    assert math.isfinite(first_passage_mean_return(HysteresisParams(2.0, 1.0, 2, 1)))
    with pytest.raises(UnstableCounterError):
        first_passage_mean_busy(HysteresisParams(2.0, 1.0, 2, 1))


def test_closed_nu_recursion():
    params = HysteresisParams(1.0, 2.0, 3, 3)
    assert closed_recursion_nu(params, 3) == pytest.approx([1.0, 2.0, 3.0])
    assert list(oracle_passage_times(params, 3).nu) == pytest.approx([1.0, 2.0, 3.0])


def test_closed_xi_recursion_diverges():
    params = HysteresisParams(1.0, 2.0, 1, 1)
    assert closed_recursion_xi(params, 2) == pytest.approx([3.0, 10.0])
    assert list(oracle_passage_times(params, 2).xi) == pytest.approx([3.0, 4.0])
    rows = xi_divergence_report([(1.0, 2.0)], [1])
    assert [(row["K_h"], row["xi_closed"], row["xi_oracle"]) for row in rows] == [
        (0, pytest.approx(10.0), pytest.approx(4.0))
    ]


def test_oracle_gap_limit():
    with pytest.raises(DomainError):
        oracle_passage_times(HysteresisParams(1.0, 2.0, 1, 1), 3)


def test_cdf_starts_at_zero_and_is_monotone():
    params = HysteresisParams(1.0, 2.0, 3, 1)
    grid = np.linspace(0.0, 200.0, 101)
    for which in Which:
        cdf = sojourn_cdf(params, which, grid)
        assert cdf[0] == 0.0
        assert np.all(np.diff(cdf) >= -1e-12)
        assert cdf[-1] == pytest.approx(1.0, abs=1e-6)


def test_return_time_without_band_is_exponential():
    params = HysteresisParams(1.5, 2.0, 0, 0)
    grid = np.linspace(0.0, 5.0, 11)
    np.testing.assert_allclose(sojourn_cdf(params, Which.R, grid), -np.expm1(-1.5 * grid), atol=1e-8)


def test_cdf_tail_integrates_to_mean():
    params = HysteresisParams(1.0, 2.0, 1, 1)
    grid = np.linspace(0.0, 120.0, 12001)
    survival = 1.0 - sojourn_cdf(params, Which.R, grid)
    assert trapezoid(survival, grid) == pytest.approx(3.0, rel=1e-5)


def test_cdf_respects_markov_bound():
    params = HysteresisParams(1.0, 2.0, 1, 1)
    grid = np.linspace(0.1, 30.0, 300)
    survival = 1.0 - sojourn_cdf(params, Which.R, grid)
    assert np.all(survival <= np.minimum(1.0, 3.0 / grid) + 1e-9)


def test_cdf_rejects_negative_times():
    with pytest.raises(DomainError):
        sojourn_cdf(HysteresisParams(1.0, 2.0, 1, 1), Which.R, [-1.0, 1.0])


def test_phase_type_mean_matches_first_passage():
    params = HysteresisParams(1.0, 2.0, 4, 2)
    assert phase_type(params, Which.R).moments()[0] == pytest.approx(first_passage_mean_return(params), rel=1e-10)
    assert phase_type(params, Which.B).moments()[0] == pytest.approx(first_passage_mean_busy(params), rel=1e-8)


@pytest.mark.parametrize("lambda_, mu", [(1.0, 2.0), (1.0, 4.0), (3.0, 4.0)])
def test_busy_period_cv(lambda_, mu):
    rho = lambda_ / mu
    cv = coefficient_of_variation(HysteresisParams(lambda_, mu, 2, 2), Which.B)
    assert cv == pytest.approx(math.sqrt((1 + rho) / (1 - rho)), rel=1e-6)


def test_exponential_return_cv():
    assert coefficient_of_variation(HysteresisParams(1.0, 2.0, 0, 0), Which.R) == pytest.approx(1.0)


def test_busy_cv_decreases_with_band():
    cvs = [coefficient_of_variation(HysteresisParams(1.0, 1.5, 5, K_h), Which.B) for K_h in (5, 3, 1)]
    assert cvs[0] > cvs[1] > cvs[2]


def test_replacement_rate():
    assert replacement_rate_hysteresis(HysteresisParams(1.0, 2.0, 1, 1)) == pytest.approx(0.25)
    assert replacement_rate_hysteresis(HysteresisParams(1.0, 2.0, 1, 0)) == pytest.approx(1.0 / 6.0)


def test_retune():
    assert retune_mu_for_target(0.25, 1.0, 1, 1) == pytest.approx(2.0, rel=1e-10)
    assert retune_mu_for_target(0.25, 1.0, 1, 0) == pytest.approx((math.sqrt(33) - 1) / 2, rel=1e-10)


def test_retuned_band_replaces_less_often():
    mu = retune_mu_for_target(0.25, 1.0, 1, 0)
    assert replacement_rate_hysteresis(HysteresisParams(1.0, mu, 1, 0)) == pytest.approx(0.1715, abs=1e-4)
    assert replacement_rate_hysteresis(HysteresisParams(1.0, 2.0, 1, 1)) > 0.1715


@pytest.mark.parametrize("pi_up, K, K_h", [(0.9, 11, 2), (0.5, 3, 0), (0.1, 6, 4)])
def test_retune_hits_target(pi_up, K, K_h):
    mu = retune_mu_for_target(pi_up, 2.0, K, K_h)
    assert renewal_occupancy(HysteresisParams(2.0, mu, K, K_h)) == pytest.approx(pi_up, rel=1e-9)


def test_retune_rejects_bad_target():
    with pytest.raises(DomainError):
        retune_mu_for_target(1.0, 1.0, 1, 1)


def test_randomized_integer_threshold():
    exact = randomized_threshold_occupancy(1.0, 2.0, 1.0)
    assert exact.pi_up == pytest.approx(0.25, rel=1e-8)
    assert exact.gamma == pytest.approx(0.25, rel=1e-8)


def test_randomized_fractional_threshold():
    exact = randomized_threshold_occupancy(1.0, 2.0, 0.5)
    assert exact.convex_combination == pytest.approx(0.375)
    assert 0.25 < exact.pi_up < 0.5
    assert 0.25 < exact.cycle_weighted < 0.5


def test_scenario_orderings():
    rows = scenario_table(10.0, 0.9, 11, [11, 7, 2])
    gammas = [row["gamma"] for row in rows]
    cvs = [row["cv_busy"] for row in rows]
    below = [row["p_return_below_t"] for row in rows]
    assert gammas[0] > gammas[1] > gammas[2]
    assert cvs[0] > cvs[1] > cvs[2]
    assert below[0] > below[1] > below[2]
    for row in rows:
        assert row["pi_up"] == pytest.approx(0.9, rel=1e-9)


GRID_RHOS = [0.2, 0.5, 0.8, 0.95]
GRID_KS = range(13)


@pytest.mark.parametrize("rho", GRID_RHOS)
@pytest.mark.parametrize("K", GRID_KS)
def test_nu_recursion_on_grid(rho, K):
    params = HysteresisParams(1.0, 1.0 / rho, K, K)
    closed = closed_recursion_nu(params, K + 1)
    assert closed == pytest.approx(list(oracle_passage_times(params, K + 1).nu), rel=1e-9)


@pytest.mark.parametrize("rho", GRID_RHOS)
@pytest.mark.parametrize("K", GRID_KS)
def test_stationary_matches_renewal_on_grid(rho, K):
    for K_h in range(K + 1):
        params = HysteresisParams(1.0, 1.0 / rho, K, K_h)
        assert stationary_occupancy(build_chain(params)) == pytest.approx(renewal_occupancy(params), rel=1e-9), K_h


@pytest.mark.parametrize("rho", GRID_RHOS)
@pytest.mark.parametrize("K", range(1, 13))
def test_wider_band_slows_the_cycle(rho, K):
    bands = [HysteresisParams(1.0, 1.0 / rho, K, K_h) for K_h in range(K, -1, -1)]
    gammas = np.array([replacement_rate_hysteresis(p) for p in bands])
    busy = np.array([first_passage_mean_busy(p) for p in bands])
    back = np.array([first_passage_mean_return(p) for p in bands])
    assert np.all(np.diff(gammas) <= 1e-12 * gammas[:-1])
    assert np.all(np.diff(busy) > 0)
    assert np.all(np.diff(back) > 0)
