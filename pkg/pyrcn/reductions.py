"""Knapsack and Partition instances turned into placement instances, with brute-force checks.

Knapsack: cache 1 has the bag capacity, cache 2 can hold everything and is reached from
cache 1 only. Request rates are item values and file sizes are item weights, so the files
left at cache 1 by an optimal placement form an optimal knapsack.

Partition: N+1 two-cache instances with unit files, capacities (m, N-m) and service rate
Lambda/2 each. Each value is split evenly over the two caches and every request is served
by the cache that stores its file; instance m is feasible iff a split of size m balances
the values.
"""

import itertools
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from pathvalidate import sanitize_filename

from pyrcn.errors import DomainError
from pyrcn.netfile import write_network
from pyrcn.network import UNBOUNDED, CacheNetwork, FlowMode, ServiceAccounting
from pyrcn.placement import PlacementResult, solve_exact
from pyrcn.utils import get_logger


@dataclass(frozen=True)
class KnapsackInstance:
    c: float
    items: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple((float(w), float(v)) for w, v in self.items))
        if not self.c > 0:
            raise DomainError(f"bag capacity must be > 0, got {self.c}")
        if not self.items or any(w <= 0 or v <= 0 for w, v in self.items):
            raise DomainError("knapsack needs at least one item with positive weight and value")

    @property
    def weights(self) -> list[float]:
        return [w for w, _ in self.items]

    @property
    def values(self) -> list[float]:
        return [v for _, v in self.items]

    def __str__(self):
        return f"c={self.c:g} items=" + ";".join(f"{w:g}/{v:g}" for w, v in self.items)


@dataclass(frozen=True)
class PartitionInstance:
    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise DomainError("partition needs at least one value")
        if any(int(v) != v or v <= 0 for v in self.values):
            raise DomainError("partition values must be positive integers")

    @property
    def N(self) -> int:
        return len(self.values)

    @property
    def total(self) -> int:
        return int(sum(self.values))

    def __str__(self):
        return ",".join(str(v) for v in self.values)


def reduce_knapsack(kp: KnapsackInstance) -> CacheNetwork:
    values = np.array(kp.values)
    # cache 2 stands in for the unbounded store
    return CacheNetwork(
        M=np.array([[0, 1], [0, 0]]),
        s=np.array([kp.c, sum(kp.weights)]),
        eta=np.array([UNBOUNDED, UNBOUNDED]),
        lambda_ext=np.vstack([values, values]),
        t=np.array(kp.weights),
    )


def reduce_partition(pt: PartitionInstance) -> list[CacheNetwork]:
    half = pt.total / 2.0
    split = np.array(pt.values, dtype=float) / 2.0
    return [
        CacheNetwork(
            M=np.array([[0, 1], [1, 0]]),
            s=np.array([m, pt.N - m], dtype=float),
            eta=np.array([half, half]),
            lambda_ext=np.vstack([split, split]),
            t=np.ones(pt.N),
        )
        for m in range(pt.N + 1)
    ]


def knapsack_optimum(kp: KnapsackInstance) -> tuple[float, tuple[int, ...]]:
    """Best value and the lexicographically first best item set, by trying every subset."""
    best_value, best_set = 0.0, ()
    for r in range(1, len(kp.items) + 1):
        for subset in itertools.combinations(range(len(kp.items)), r):
            if sum(kp.items[i][0] for i in subset) > kp.c:
                continue
            value = sum(kp.items[i][1] for i in subset)
            if value > best_value:
                best_value, best_set = value, subset
    return best_value, best_set


def has_partition(values) -> bool:
    total = sum(values)
    if total % 2:
        return False
    reachable = {0}
    for v in values:
        reachable |= {r + v for r in reachable}
    return total // 2 in reachable


def solve_knapsack_reduction(kp: KnapsackInstance, mode: FlowMode = FlowMode.MIQCP) -> PlacementResult:
    return solve_exact(reduce_knapsack(kp), mode=mode)


def partition_feasible(net: CacheNetwork) -> bool:
    result = solve_exact(net, accounting=ServiceAccounting.ABSORBED, strict=False)
    return result.feasible


def check_knapsack(kp: KnapsackInstance, mode: FlowMode = FlowMode.MIQCP) -> dict:
    optimum, _ = knapsack_optimum(kp)
    result = solve_knapsack_reduction(kp, mode)
    chosen = result.placement.files_at(0) if result.placement is not None else []
    carried = sum(kp.items[i][1] for i in chosen)
    return {
        "kind": "knapsack",
        "instance": str(kp),
        "side_a": optimum,
        "side_b": carried,
        "agree": result.feasible and abs(carried - optimum) <= 1e-9 * max(1.0, optimum),
    }


def check_partition(pt: PartitionInstance) -> dict:
    side_a = has_partition(pt.values)
    side_b = any(partition_feasible(net) for net in reduce_partition(pt))
    return {"kind": "partition", "instance": str(pt), "side_a": side_a, "side_b": side_b, "agree": side_a == side_b}


def partition_instances(max_n: int, max_value: int):
    for n in range(1, max_n + 1):
        for values in itertools.combinations_with_replacement(range(1, max_value + 1), n):
            yield PartitionInstance(values)


def knapsack_instances(max_n: int, max_value: int, trials: int, seed: int = 0):
    rng = random.Random(seed)
    for _ in range(trials):
        n = rng.randint(1, max_n)
        items = tuple((rng.randint(1, max_value), rng.randint(1, max_value)) for _ in range(n))
        c = rng.randint(1, max_value * n)
        yield KnapsackInstance(c, items)


def verify_reductions(
    max_n: int = 6,
    max_value: int = 4,
    knapsack_max_n: int = 6,
    knapsack_trials: int = 50,
    seed: int = 0,
) -> list[dict]:
    """Decide both sides of each reduction on every instance in range; one row per instance."""
    if max_n > 10 or max_value > 8 or knapsack_max_n > 12:
        raise DomainError("reduction checks are limited to N <= 10 (Partition), N <= 12 (Knapsack), values <= 8")
    log = get_logger(__name__)
    rows = [check_partition(pt) for pt in partition_instances(max_n, max_value)]
    rows += [check_knapsack(kp) for kp in knapsack_instances(knapsack_max_n, max_value, knapsack_trials, seed)]
    failures = [row for row in rows if not row["agree"]]
    if failures:
        log.warning(f"{len(failures)} reduction counterexamples, first: {failures[0]}")
    else:
        log.info(f"Both reductions hold on all {len(rows)} instances")
    return rows


def write_instances(out_dir, pt: Optional[PartitionInstance] = None, kp: Optional[KnapsackInstance] = None) -> list:
    """Write the reduced networks as network description files; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if pt is not None:
        for m, net in enumerate(reduce_partition(pt)):
            path = out_dir / sanitize_filename(f"partition_{pt}_m{m}.net")
            write_network(path, net)
            paths.append(path)
    if kp is not None:
        path = out_dir / sanitize_filename(f"knapsack_{kp}.net")
        write_network(path, reduce_knapsack(kp))
        paths.append(path)
    return paths
