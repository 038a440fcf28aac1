import math

import numpy as np
import pytest

from pyrcn.errors import DomainError
from pyrcn.netfile import read_network
from pyrcn.network import FlowMode
from pyrcn.reductions import (
    KnapsackInstance,
    PartitionInstance,
    check_knapsack,
    check_partition,
    has_partition,
    knapsack_optimum,
    partition_feasible,
    reduce_knapsack,
    reduce_partition,
    solve_knapsack_reduction,
    verify_reductions,
    write_instances,
)

SMALL_BAG = KnapsackInstance(5, ((3, 10), (4, 6)))


def test_knapsack_network():
    net = reduce_knapsack(SMALL_BAG)
    assert net.s[0] == 5.0
    assert net.s[1] >= 7.0
    np.testing.assert_array_equal(net.M, [[0, 1], [0, 0]])
    np.testing.assert_array_equal(net.t, [3.0, 4.0])
    assert all(math.isinf(eta) for eta in net.eta)


def test_knapsack_optimum():
    assert knapsack_optimum(SMALL_BAG) == (10.0, (0,))


@pytest.mark.parametrize("mode", list(FlowMode))
def test_knapsack_reduction(mode):
    result = solve_knapsack_reduction(SMALL_BAG, mode)
    assert result.placement.files_at(0) == [0]
    row = check_knapsack(SMALL_BAG, mode)
    assert row["agree"]
    assert row["side_a"] == row["side_b"] == 10.0


def test_objective_offsets():
    total = sum(SMALL_BAG.values)
    assert solve_knapsack_reduction(SMALL_BAG, FlowMode.MIQCP).objective == pytest.approx(total - 10.0)
    assert solve_knapsack_reduction(SMALL_BAG, FlowMode.VERBATIM).objective == pytest.approx(3 * total - 10.0)


def test_item_heavier_than_bag():
    kp = KnapsackInstance(2, ((3, 10), (1, 1)))
    result = solve_knapsack_reduction(kp)
    assert result.placement.A[0, 0] == 0
    assert result.placement.A[1, 0] == 1
    assert check_knapsack(kp)["agree"]


def test_partition_networks():
    nets = reduce_partition(PartitionInstance((1, 1, 2)))
    assert len(nets) == 4
    for m, net in enumerate(nets):
        np.testing.assert_array_equal(net.s, [m, 3 - m])
        np.testing.assert_array_equal(net.eta, [2.0, 2.0])
        assert net.total_demand == pytest.approx(4.0)


@pytest.mark.parametrize("values, expected", [((1, 1, 2), True), ((1, 1, 1), False), ((2, 2), True), ((3, 1, 1), False)])
def test_partition(values, expected):
    pt = PartitionInstance(values)
    assert has_partition(values) is expected
    row = check_partition(pt)
    assert row["side_b"] is expected
    assert row["agree"]


def test_partition_feasible_at_balanced_split():
    feasible = [partition_feasible(net) for net in reduce_partition(PartitionInstance((2, 2)))]
    assert feasible == [False, True, False]


def test_invalid_instances():
    with pytest.raises(DomainError):
        PartitionInstance((1, 0))
    with pytest.raises(DomainError):
        PartitionInstance((1.5,))
    with pytest.raises(DomainError):
        KnapsackInstance(0, ((1, 1),))
    with pytest.raises(DomainError):
        KnapsackInstance(3, ())


def test_verify_small_range():
    rows = verify_reductions(max_n=4, max_value=3, knapsack_max_n=4, knapsack_trials=10)
    assert rows
    assert all(row["agree"] for row in rows)
    assert {row["kind"] for row in rows} == {"partition", "knapsack"}


def test_verify_limits():
    with pytest.raises(DomainError):
        verify_reductions(max_n=11)


def test_write_instances(tmp_path):
    pt = PartitionInstance((1, 1, 2))
    paths = write_instances(tmp_path, pt=pt, kp=SMALL_BAG)
    assert len(paths) == pt.N + 2
    assert all(p.exists() and p.parent == tmp_path for p in paths)
    net, profile = read_network(paths[1])
    np.testing.assert_array_equal(net.s, [1.0, 2.0])
    assert profile is None


@pytest.mark.slow
def test_verify_default_range():
    assert all(row["agree"] for row in verify_reductions())


@pytest.mark.slow
def test_verify_full_range():
    rows = verify_reductions(max_n=8, max_value=6, knapsack_max_n=12, knapsack_trials=50, seed=1)
    assert all(row["agree"] for row in rows)
