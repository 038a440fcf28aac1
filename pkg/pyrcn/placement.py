"""Static content placement: a binary matrix A (cache x file) stores each file somewhere.

A placement is feasible when every file is stored at least once, no cache exceeds its
storage and every cache can serve its load. The objective is the total input rate
sum_i alpha_i of the resulting flow.
"""

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from pyrcn.errors import DomainError, SinkWithoutStorageError, UnplacedContentError
from pyrcn.network import (
    STABILITY_ATOL,
    AvailabilityProfile,
    CacheNetwork,
    FlowMode,
    ServiceAccounting,
    content_flow,
    routing_matrix,
    solve_flow,
    stability,
)
from pyrcn.utils import get_logger

ENUMERATION_LIMIT = 24
TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class PlacementMatrix:
    A: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=int))
        if self.A.ndim != 2 or not np.isin(self.A, (0, 1)).all():
            raise DomainError("placement must be a binary cache x file matrix")

    def key(self) -> tuple:
        """Row-major entries; tuples compare lexicographically."""
        return tuple(int(x) for x in self.A.ravel())

    def uncovered(self) -> np.ndarray:
        return np.flatnonzero(self.A.sum(axis=0) < 1)

    def overfull(self, net: CacheNetwork) -> np.ndarray:
        return np.flatnonzero(self.A @ net.t > net.s)

    def files_at(self, cache: int) -> list[int]:
        return np.flatnonzero(self.A[cache]).tolist()

    def __str__(self):
        return "\n".join(" ".join(str(x) for x in row) for row in self.A)


@dataclass(frozen=True)
class PlacementResult:
    feasible: bool
    objective: float
    violated: Optional[str] = None
    placement: Optional[PlacementMatrix] = field(default=None, compare=False)
    load: Optional[np.ndarray] = field(default=None, compare=False)


def evaluate(
    net: CacheNetwork,
    A,
    mode: FlowMode = FlowMode.VERBATIM,
    accounting: ServiceAccounting = ServiceAccounting.TOTAL,
    strict: bool = True,
) -> PlacementResult:
    """Check coverage, capacity and stability of a placement and compute sum_i alpha_i.

    Infeasibility is reported through ``violated`` (coverage, capacity, routing, stability);
    the objective is infinite when no flow exists.
    """
    placement = A if isinstance(A, PlacementMatrix) else PlacementMatrix(A)
    if placement.A.shape != (net.C, net.F):
        raise DomainError(f"placement is {placement.A.shape}, network needs {(net.C, net.F)}")
    try:
        flow = solve_flow(net, AvailabilityProfile.from_placement(placement.A), mode=mode)
    except (SinkWithoutStorageError, UnplacedContentError) as e:
        get_logger(__name__).debug(f"No flow for placement {placement.key()}: {e}")
        flow = None
    objective = float(flow.alpha.sum()) if flow is not None else math.inf
    load = flow.service_load(accounting) if flow is not None else None

    if placement.uncovered().size:
        violated = "coverage"
    elif placement.overfull(net).size:
        violated = "capacity"
    elif flow is None:
        violated = "routing"
    elif not stability(net, flow, accounting=accounting, strict=strict).stable:
        violated = "stability"
    else:
        violated = None
    return PlacementResult(violated is None, objective, violated, placement, load)


def enumerate_placements(net: CacheNetwork) -> Iterator[np.ndarray]:
    """Every binary C x F matrix, in lexicographic row-major order."""
    for bits in itertools.product((0, 1), repeat=net.C * net.F):
        yield np.array(bits, dtype=int).reshape(net.C, net.F)


@dataclass(frozen=True, eq=False)
class Column:
    """One way of storing a single file, with the flow it induces."""

    bits: np.ndarray
    storage: np.ndarray
    load: np.ndarray
    cost: float


def file_columns(
    net: CacheNetwork,
    f: int,
    mode: FlowMode = FlowMode.VERBATIM,
    accounting: ServiceAccounting = ServiceAccounting.TOTAL,
) -> list[Column]:
    """Storage patterns of file f that cover it, fit every cache and admit a flow, cheapest first."""
    P = routing_matrix(net)
    columns = []
    for bits in itertools.product((0, 1), repeat=net.C):
        pi_f = np.array(bits, dtype=float)
        if not pi_f.any() or np.any(pi_f * net.t[f] > net.s):
            continue
        try:
            alpha = content_flow(net, f, pi_f, mode, P)
        except (SinkWithoutStorageError, UnplacedContentError):
            continue
        if mode is FlowMode.MIQCP or accounting is ServiceAccounting.TOTAL:
            load = alpha
        elif accounting is ServiceAccounting.MISSES:
            load = alpha * (1.0 - pi_f)
        else:
            load = alpha * pi_f
        columns.append(Column(np.array(bits, dtype=int), pi_f * net.t[f], load, float(alpha.sum())))
    columns.sort(key=lambda col: col.cost)
    return columns


class BranchAndBound:
    """Depth-first search over files; each file takes one of its columns.

    Storage and service loads only grow along a branch, so a branch dies as soon as a cache
    overflows; the cheapest column of every remaining file bounds the cost from below.
    """

    def __init__(self, net, mode, accounting, strict, first: Optional[int] = None):
        self.net = net
        self.strict = strict
        self.columns = [file_columns(net, f, mode, accounting) for f in range(net.F)]
        if first is not None:
            self.columns[0] = [self.columns[0][first]]
        cheapest = [min((col.cost for col in cols), default=math.inf) for cols in self.columns]
        self.rest = np.concatenate([np.cumsum(cheapest[::-1])[::-1], [0.0]])
        self.best_cost = math.inf
        self.best_key: Optional[tuple] = None
        self.best_A: Optional[np.ndarray] = None
        self.nodes = 0

    def _overloaded(self, load):
        if self.strict:
            return np.any(load >= self.net.eta)
        return np.any(load > self.net.eta + STABILITY_ATOL * np.maximum(1.0, load))

    def _tolerance(self):
        return TIE_RTOL * max(1.0, abs(self.best_cost)) if math.isfinite(self.best_cost) else 0.0

    def run(self):
        if self.net.F == 0 or any(not cols for cols in self.columns):
            return self
        A = np.zeros((self.net.C, self.net.F), dtype=int)
        self._descend(0, A, np.zeros(self.net.C), np.zeros(self.net.C), 0.0)
        return self

    def _descend(self, f, A, storage, load, cost):
        self.nodes += 1
        if f == self.net.F:
            key = tuple(int(x) for x in A.ravel())
            tol = self._tolerance()
            if cost < self.best_cost - tol or (cost <= self.best_cost + tol and key < self.best_key):
                self.best_cost, self.best_key, self.best_A = cost, key, A.copy()
            return
        for col in self.columns[f]:
            if cost + col.cost + self.rest[f + 1] > self.best_cost + self._tolerance():
                # columns are sorted by cost
                break
            new_storage = storage + col.storage
            new_load = load + col.load
            if np.any(new_storage > self.net.s) or self._overloaded(new_load):
                continue
            A[:, f] = col.bits
            self._descend(f + 1, A, new_storage, new_load, cost + col.cost)
        A[:, f] = 0


def _better(result: PlacementResult, best: Optional[PlacementResult]) -> bool:
    if not result.feasible:
        return False
    if best is None:
        return True
    tol = TIE_RTOL * max(1.0, abs(best.objective))
    if result.objective < best.objective - tol:
        return True
    return result.objective <= best.objective + tol and result.placement.key() < best.placement.key()


def _shard(args):
    net, mode, accounting, strict, first = args
    search = BranchAndBound(net, mode, accounting, strict, first).run()
    return search.best_A, search.nodes


def solve_exact(
    net: CacheNetwork,
    mode: FlowMode = FlowMode.VERBATIM,
    accounting: ServiceAccounting = ServiceAccounting.TOTAL,
    strict: bool = True,
    method: str = "prune",
    workers: int = 1,
) -> PlacementResult:
    """Globally optimal placement; ties go to the lexicographically smallest matrix.

    ``method="enumerate"`` evaluates all 2^(C F) matrices and is limited to C F <= 24;
    ``method="prune"`` runs the branch and bound. When nothing is feasible the result is
    infeasible with violated="infeasible instance".
    """
    log = get_logger(__name__)
    best: Optional[PlacementResult] = None
    if method == "enumerate":
        if net.C * net.F > ENUMERATION_LIMIT:
            raise DomainError(f"full enumeration needs C*F <= {ENUMERATION_LIMIT}, got {net.C * net.F}")
        count = 0
        for A in enumerate_placements(net):
            count += 1
            result = evaluate(net, A, mode=mode, accounting=accounting, strict=strict)
            if _better(result, best):
                best = result
    elif method == "prune":
        if workers > 1 and net.F > 0:
            shards = [(net, mode, accounting, strict, k) for k in range(len(file_columns(net, 0, mode, accounting)))]
            with ProcessPoolExecutor(max_workers=workers) as executor:
                found = list(executor.map(_shard, shards))
        else:
            found = [_shard((net, mode, accounting, strict, None))]
        count = sum(nodes for _, nodes in found)
        for A, _ in found:
            if A is None:
                continue
            result = evaluate(net, A, mode=mode, accounting=accounting, strict=strict)
            if _better(result, best):
                best = result
    else:
        raise DomainError(f"unknown search method {method!r}")

    log.info(f"Searched {count} placements or nodes ({method})")
    if best is None:
        return PlacementResult(False, math.inf, "infeasible instance")
    return best
