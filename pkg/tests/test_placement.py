import numpy as np
import pytest

from pyrcn.errors import DomainError
from pyrcn.network import CacheNetwork, FlowMode, ServiceAccounting
from pyrcn.placement import (
    ENUMERATION_LIMIT,
    PlacementMatrix,
    enumerate_placements,
    evaluate,
    file_columns,
    solve_exact,
)


def two_by_two(eta=100.0):
    return CacheNetwork(
        M=np.array([[0, 1], [1, 0]]),
        s=np.array([1.0, 1.0]),
        eta=np.array([eta, eta]),
        lambda_ext=np.ones((2, 2)),
        t=np.ones(2),
    )


def random_network(rng, C, F):
    return CacheNetwork(
        M=np.ones((C, C), dtype=int) - np.eye(C, dtype=int),
        s=rng.integers(1, F + 1, C).astype(float),
        eta=rng.uniform(2.0, 8.0, C),
        lambda_ext=rng.uniform(0.1, 2.0, (C, F)),
        t=rng.integers(1, 3, F).astype(float),
    )


def test_single_cache_stores_everything():
    net = CacheNetwork(
        M=np.array([[0]]), s=np.array([3.0]), eta=np.array([10.0]), lambda_ext=np.array([[1.0, 2.0, 0.5]]), t=np.ones(3)
    )
    result = solve_exact(net)
    assert result.feasible
    np.testing.assert_array_equal(result.placement.A, [[1, 1, 1]])
    assert result.objective == pytest.approx(3.5)


def test_symmetric_tie_takes_smallest_matrix():
    for method in ("prune", "enumerate"):
        result = solve_exact(two_by_two(), method=method)
        np.testing.assert_array_equal(result.placement.A, [[0, 1], [1, 0]])
        assert result.objective == pytest.approx(6.0)


def test_coverage_violation():
    result = evaluate(two_by_two(), [[1, 0], [0, 0]])
    assert not result.feasible
    assert result.violated == "coverage"


def test_capacity_violation():
    result = evaluate(two_by_two(), [[1, 1], [0, 0]])
    assert result.violated == "capacity"


def test_stability_violation():
    result = evaluate(two_by_two(eta=2.5), [[1, 0], [0, 1]])
    assert result.violated == "stability"
    assert evaluate(two_by_two(eta=3.5), [[1, 0], [0, 1]]).feasible


def test_feasible_placements_respect_constraints():
    rng = np.random.default_rng(5)
    net = random_network(rng, 2, 3)
    for A in enumerate_placements(net):
        result = evaluate(net, A)
        if result.feasible:
            assert np.all(A.sum(axis=0) >= 1)
            assert np.all(A @ net.t <= net.s)


def test_placement_shape_checked():
    with pytest.raises(DomainError):
        evaluate(two_by_two(), [[1, 0, 1]])
    with pytest.raises(DomainError):
        PlacementMatrix([[2, 0]])


def test_files_at():
    assert PlacementMatrix([[1, 0, 1], [0, 1, 0]]).files_at(0) == [0, 2]


def test_columns_sorted_by_cost():
    columns = file_columns(two_by_two(), 0)
    costs = [col.cost for col in columns]
    assert costs == sorted(costs)
    # storing at both caches is the cheapest way, the empty column is never offered
    np.testing.assert_array_equal(columns[0].bits, [1, 1])
    assert all(col.bits.any() for col in columns)


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("mode", list(FlowMode))
def test_prune_matches_enumeration(seed, mode):
    rng = np.random.default_rng(seed)
    net = random_network(rng, int(rng.integers(2, 4)), int(rng.integers(2, 4)))
    pruned = solve_exact(net, mode=mode)
    enumerated = solve_exact(net, mode=mode, method="enumerate")
    assert pruned.feasible == enumerated.feasible
    if pruned.feasible:
        assert pruned.objective == pytest.approx(enumerated.objective, rel=1e-9)
        assert pruned.placement.key() == enumerated.placement.key()


def test_optimum_is_global():
    rng = np.random.default_rng(11)
    net = random_network(rng, 3, 2)
    best = solve_exact(net)
    for A in enumerate_placements(net):
        result = evaluate(net, A)
        if result.feasible:
            assert best.objective <= result.objective + 1e-9


def test_infeasible_instance():
    net = CacheNetwork(
        M=np.array([[0, 1], [1, 0]]), s=np.array([1.0, 0.0]), eta=np.array([10.0, 10.0]), lambda_ext=np.ones((2, 2)), t=np.ones(2)
    )
    result = solve_exact(net)
    assert not result.feasible
    assert result.violated == "infeasible instance"
    assert result.placement is None


def test_absorbed_accounting_relaxes_load():
    # every request is served exactly once, where it is absorbed
    result = solve_exact(two_by_two(eta=2.0), accounting=ServiceAccounting.ABSORBED, strict=False)
    assert result.feasible
    assert not solve_exact(two_by_two(eta=2.0)).feasible


def test_enumeration_limit():
    net = CacheNetwork(
        M=np.ones((5, 5), dtype=int) - np.eye(5, dtype=int),
        s=np.full(5, 5.0),
        eta=np.full(5, 100.0),
        lambda_ext=np.ones((5, 5)),
        t=np.ones(5),
    )
    assert net.C * net.F > ENUMERATION_LIMIT
    with pytest.raises(DomainError):
        solve_exact(net, method="enumerate")
    with pytest.raises(DomainError):
        solve_exact(net, method="simplex")


def test_parallel_search_matches_serial():
    rng = np.random.default_rng(2)
    net = random_network(rng, 3, 4)
    serial = solve_exact(net)
    parallel = solve_exact(net, workers=2)
    assert serial.feasible == parallel.feasible
    if serial.feasible:
        assert serial.placement.key() == parallel.placement.key()
