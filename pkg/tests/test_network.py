import math

import numpy as np
import pytest

from pyrcn.errors import DomainError, SinkWithoutStorageError, UnplacedContentError
from pyrcn.network import (
    UNBOUNDED,
    AvailabilityProfile,
    CacheNetwork,
    FixedK,
    FlowMode,
    FlowSolution,
    OptimizedK,
    ServiceAccounting,
    content_flow,
    expected_occupancy,
    provision_network,
    response_time,
    routing_matrix,
    solve_flow,
    stability,
)
from pyrcn.optimizer import CostWeights, minimize


def network(M, lambda_ext, eta=None, s=None, t=None):
    M = np.asarray(M)
    lambda_ext = np.asarray(lambda_ext, dtype=float)
    C, F = lambda_ext.shape
    return CacheNetwork(
        M=M,
        s=np.full(C, float(F)) if s is None else s,
        eta=np.full(C, 100.0) if eta is None else eta,
        lambda_ext=lambda_ext,
        t=np.ones(F) if t is None else t,
    )


def test_ring_routing(ring):
    np.testing.assert_array_equal(routing_matrix(ring), [[0.0, 1.0], [1.0, 0.0]])


def test_star_routing():
    M = np.zeros((4, 4), dtype=int)
    M[0, 1:] = 1
    M[1:, 0] = 1
    P = routing_matrix(network(M, np.ones((4, 1))))
    np.testing.assert_allclose(P[0], [0.0, 1 / 3, 1 / 3, 1 / 3])
    np.testing.assert_allclose(P.sum(axis=1), 1.0)


def test_isolated_cache_holding_everything():
    net = network([[0]], [[1.0, 2.0]])
    profile = AvailabilityProfile(np.ones((1, 2)))
    np.testing.assert_array_equal(routing_matrix(net, profile), [[0.0]])
    np.testing.assert_allclose(solve_flow(net, profile).alpha, [[1.0, 2.0]])


@pytest.mark.parametrize("mode", list(FlowMode))
def test_sink_without_storage(mode):
    net = network([[0]], [[1.0]])
    with pytest.raises(SinkWithoutStorageError, match="cache 1"):
        solve_flow(net, AvailabilityProfile([[0.5]]), mode=mode)
    with pytest.raises(SinkWithoutStorageError, match="cache 2"):
        content_flow(network([[0, 1], [0, 0]], [[1.0], [0.0]]), 0, [0.0, 0.0], mode)


def test_ring_flow(ring, half_cached):
    solution = solve_flow(ring, half_cached)
    np.testing.assert_allclose(solution.alpha_cache, [2.0, 2.0])
    assert solution.stable
    assert solution.EN == pytest.approx(1.0)
    assert solution.ET == pytest.approx(0.5)


def test_flow_without_misses(ring):
    solution = solve_flow(ring, AvailabilityProfile(np.ones((2, 1))))
    np.testing.assert_allclose(solution.alpha, ring.lambda_ext)


def test_one_sided_ring():
    net = network([[0, 1], [1, 0]], [[1.0], [0.0]])
    solution = solve_flow(net, AvailabilityProfile([[0.0], [1.0]]))
    np.testing.assert_allclose(solution.alpha_cache, [1.0, 1.0])


def test_misses_only_flow(ring, half_cached):
    solution = solve_flow(ring, half_cached, mode=FlowMode.MIQCP)
    np.testing.assert_allclose(solution.alpha_cache, [1.0, 1.0])


def test_unplaced_content(ring):
    with pytest.raises(UnplacedContentError, match="file 1"):
        solve_flow(ring, AvailabilityProfile(np.zeros((2, 1))))


def test_parallel_solve_matches_serial():
    rng = np.random.default_rng(3)
    M = np.ones((5, 5), dtype=int) - np.eye(5, dtype=int)
    net = network(M, rng.uniform(0.0, 2.0, (5, 8)))
    profile = AvailabilityProfile(rng.uniform(0.1, 0.9, (5, 8)))
    np.testing.assert_array_equal(solve_flow(net, profile).alpha, solve_flow(net, profile, workers=3).alpha)


def random_topology(rng, C):
    """Random directed graph without self-loops in which every cache forwards somewhere."""
    M = (rng.random((C, C)) < 0.4).astype(int)
    np.fill_diagonal(M, 0)
    for i in np.flatnonzero(M.sum(axis=1) == 0):
        M[i, rng.choice([j for j in range(C) if j != i])] = 1
    return M


@pytest.mark.parametrize("seed", range(50))
def test_conservation_and_monotonicity(seed):
    rng = np.random.default_rng(seed)
    C, F = int(rng.integers(2, 8)), 3
    M = random_topology(rng, C)
    net = network(M, rng.uniform(0.0, 3.0, (C, F)))
    pi = rng.uniform(0.05, 0.95, (C, F))
    solution = solve_flow(net, AvailabilityProfile(pi))
    assert np.all(solution.alpha >= net.lambda_ext - 1e-12)
    np.testing.assert_allclose((solution.alpha * pi).sum(axis=0), net.lambda_ext.sum(axis=0), rtol=1e-9)

    raised = pi.copy()
    i, c = rng.integers(C), rng.integers(F)
    raised[i, c] = min(1.0, raised[i, c] + 0.3)
    assert np.all(solve_flow(net, AvailabilityProfile(raised)).alpha <= solution.alpha + 1e-9)


def test_static_profile_matches_probabilistic(ring):
    A = np.array([[1], [0]])
    static = solve_flow(ring, AvailabilityProfile.from_placement(A))
    probabilistic = solve_flow(ring, AvailabilityProfile(A.astype(float)))
    np.testing.assert_array_equal(static.alpha, probabilistic.alpha)


def test_static_profile_must_be_binary():
    with pytest.raises(DomainError):
        AvailabilityProfile(np.array([[0.5]]), static=True)


def _solution(alpha):
    alpha = np.asarray(alpha, dtype=float)[:, None]
    return FlowSolution(alpha, np.full_like(alpha, 0.5), FlowMode.VERBATIM, True, 0.0, 0.0)


@pytest.mark.parametrize(
    "eta, stable, slack",
    [((3.0, 3.0), True, (1.0, 1.0)), ((2.0, 2.0), False, (0.0, 0.0)), ((2.1, 1.9), False, (0.1, -0.1))],
)
def test_stability(eta, stable, slack):
    net = network([[0, 1], [1, 0]], [[1.0], [1.0]], eta=np.array(eta))
    report = stability(net, _solution([2.0, 2.0]))
    assert report.stable is stable
    np.testing.assert_allclose(report.slack, slack)


def test_non_strict_stability():
    net = network([[0, 1], [1, 0]], [[1.0], [1.0]], eta=np.array([2.0, 2.0]))
    assert stability(net, _solution([2.0, 2.0]), strict=False).stable


def test_absorbed_accounting(ring, half_cached):
    solution = solve_flow(ring, half_cached)
    np.testing.assert_allclose(solution.service_load(ServiceAccounting.ABSORBED), [1.0, 1.0])
    np.testing.assert_allclose(solution.service_load(ServiceAccounting.MISSES), [1.0, 1.0])


def test_unbounded_service():
    net = network([[0, 1], [1, 0]], [[1.0], [1.0]], eta=np.array([UNBOUNDED, UNBOUNDED]))
    solution = solve_flow(net, AvailabilityProfile([[0.5], [0.5]]))
    assert stability(net, solution).stable
    assert solution.EN == 0.0


def test_response_time_pinned():
    net = network([[0, 1], [1, 0]], [[1.0], [1.0]], eta=np.array([2.0, 2.0]))
    solution = solve_flow(net, AvailabilityProfile(np.ones((2, 1))))
    assert (solution.EN, solution.ET) == pytest.approx((1.0, 0.5))


def test_response_time_scales_with_service(ring, half_cached):
    faster = network(ring.M, ring.lambda_ext, eta=2 * ring.eta)
    slow, fast = solve_flow(ring, half_cached), solve_flow(faster, half_cached)
    assert fast.EN == pytest.approx(slow.EN / 2)
    assert fast.ET == pytest.approx(slow.ET / 2)


def test_queue_length_variant(ring, half_cached):
    EN, ET = response_time(ring, solve_flow(ring, half_cached), queue_length=True)
    assert (EN, ET) == pytest.approx((2.0, 1.0))


def test_response_time_without_demand():
    net = network([[0, 1], [1, 0]], [[0.0], [0.0]])
    solution = solve_flow(net, AvailabilityProfile([[0.5], [0.5]]))
    with pytest.raises(DomainError):
        response_time(net, solution)


def test_expected_occupancy_exact():
    net = network([[0]], np.zeros((1, 10)), s=np.array([5.0]))
    report = expected_occupancy(AvailabilityProfile(np.full((1, 10), 0.5)), net)
    assert report.exact
    assert report.expected[0] == pytest.approx(5.0)
    assert report.overflow[0] == pytest.approx(0.376953125, abs=1e-12)


def test_expected_occupancy_edges():
    net = network([[0]], np.zeros((1, 4)), s=np.array([4.0]))
    empty = expected_occupancy(AvailabilityProfile(np.zeros((1, 4))), net)
    full = expected_occupancy(AvailabilityProfile(np.ones((1, 4))), net)
    assert (empty.expected[0], empty.overflow[0]) == (0.0, 0.0)
    assert (full.expected[0], full.overflow[0]) == (4.0, 0.0)


def test_expected_occupancy_sampled():
    net = network([[0]], np.zeros((1, 4)), s=np.array([2.0]), t=np.array([1.0, 1.0, 2.0, 2.0]))
    report = expected_occupancy(AvailabilityProfile(np.full((1, 4), 0.5)), net, samples=20000, seed=1)
    assert not report.exact
    assert report.expected[0] == pytest.approx(3.0)
    # 6 of the 16 equally likely subsets fit into 2 units
    assert report.overflow[0] == pytest.approx(10 / 16, abs=0.02)


def test_provision_fixed_threshold(ring, half_cached):
    provisions = provision_network(ring, half_cached, FixedK(0))
    assert [p.status for p in provisions] == ["counter", "counter"]
    for p in provisions:
        assert p.arrival_rate == pytest.approx(2.0)
        assert p.params.mu == pytest.approx(4.0)


def test_provision_statuses():
    net = network([[0, 1], [1, 0]], [[1.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    targets = AvailabilityProfile([[1.0, 0.5, 0.5], [0.5, 0.5, 0.0]])
    statuses = {(p.cache, p.content): p.status for p in provision_network(net, targets, FixedK(1))}
    assert statuses[(0, 0)] == "pinned"
    assert statuses[(1, 2)] == "absent"
    assert statuses[(0, 1)] == "idle"
    assert statuses[(1, 0)] == "counter"


def test_provision_optimized_threshold(ring, half_cached):
    weights = CostWeights(1.0, 1.0)
    for p in provision_network(ring, half_cached, OptimizedK(weights)):
        assert p.params.K == pytest.approx(minimize(weights, 0.5, 2.0)[0])


def test_occupancy_dp_matches_sampling():
    pi = np.array([[0.1, 0.3, 0.5, 0.7, 0.9, 0.2, 0.4, 0.6]])
    unit = network([[0]], np.zeros((1, 8)), s=np.array([3.0]))
    exact = expected_occupancy(AvailabilityProfile(pi), unit)
    # doubling every size and the capacity keeps the overflow event but forces sampling
    doubled = network([[0]], np.zeros((1, 8)), s=np.array([6.0]), t=np.full(8, 2.0))
    draws = 1_000_000
    sampled = expected_occupancy(AvailabilityProfile(pi), doubled, samples=draws, seed=7)
    assert exact.exact and not sampled.exact
    p = exact.overflow[0]
    assert abs(sampled.overflow[0] - p) <= 3 * math.sqrt(p * (1 - p) / draws)
