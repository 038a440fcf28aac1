"""Mixed-integer quadratically constrained model of the placement problem, as LP-style text.

Variables are ``A_i_j`` (binary, file j stored at cache i) and ``alpha_i_j`` (continuous,
rate of requests for j that need processing at i), written row-major with 1-based ids.
The flow rows carry the bilinear terms A_i_j * alpha_k_j:

    alpha_ij = (1 - A_ij) (lambda_ij + sum_k alpha_kj p_ki)
"""

import math
from dataclasses import dataclass, field

import numpy as np

from pyrcn.errors import ConfigError
from pyrcn.network import CacheNetwork, routing_matrix
from pyrcn.utils import get_logger

FEASIBILITY_ATOL = 1e-9


@dataclass
class Row:
    name: str
    sense: str
    rhs: float
    linear: dict = field(default_factory=dict)
    quadratic: dict = field(default_factory=dict)


@dataclass
class MiqcpModel:
    objective: dict
    rows: list
    binaries: list
    continuous: list

    def rows_with_prefix(self, prefix):
        return [row for row in self.rows if row.name.startswith(prefix)]


@dataclass(frozen=True)
class AssignmentValue:
    feasible: bool
    objective: float
    alpha: dict = field(compare=False)


def _coef(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _term(coef, var):
    sign = "-" if coef < 0 else "+"
    return f"{sign} {_coef(abs(coef))} {var}"


def _A(i, j):
    return f"A_{i + 1}_{j + 1}"


def _alpha(i, j):
    return f"alpha_{i + 1}_{j + 1}"


def export_miqcp(net: CacheNetwork) -> str:
    """Deterministic model text for the network; identical input gives identical bytes."""
    C, F = net.C, net.F
    P = routing_matrix(net)
    lines = [f"\\ pyrcn placement model: {C} caches, {F} files", "Minimize"]
    lines.append(" obj: " + " ".join(_term(1.0, _alpha(i, j)) for i in range(C) for j in range(F)))
    lines.append("Subject To")
    for j in range(F):
        lines.append(f" cover_{j + 1}: " + " ".join(_term(1.0, _A(i, j)) for i in range(C)) + " >= 1.0")
    for i in range(C):
        terms = " ".join(_term(net.t[j], _A(i, j)) for j in range(F))
        lines.append(f" capacity_{i + 1}: {terms} <= {_coef(net.s[i])}")
    for i in range(C):
        terms = " ".join(_term(1.0, _alpha(i, j)) for j in range(F))
        lines.append(f" service_{i + 1}: {terms} <= {_coef(net.eta[i])}")
    for i in range(C):
        for j in range(F):
            terms = [_term(1.0, _alpha(i, j))]
            lam = net.lambda_ext[i, j]
            if lam != 0.0:
                terms.append(_term(lam, _A(i, j)))
            for k in range(C):
                p = P[k, i]
                if p != 0.0:
                    terms.append(_term(-p, _alpha(k, j)))
            for k in range(C):
                p = P[k, i]
                if p != 0.0:
                    sign = "-" if p < 0 else "+"
                    terms.append(f"+ [ {sign} {_coef(abs(p))} {_A(i, j)} * {_alpha(k, j)} ]")
            lines.append(f" flow_{i + 1}_{j + 1}: " + " ".join(terms) + f" = {_coef(lam)}")
    lines.append("Bounds")
    for i in range(C):
        for j in range(F):
            lines.append(f" {_alpha(i, j)} >= 0")
    lines.append("Binaries")
    for i in range(C):
        lines.append(" " + " ".join(_A(i, j) for j in range(F)))
    lines.append("End")
    get_logger(__name__).debug(f"Exported model with {2 * C * F} variables and {F + 2 * C + C * F} rows")
    return "\n".join(lines) + "\n"


def _parse_terms(tokens, where):
    linear, quadratic = {}, {}
    pos = 0
    while pos < len(tokens):
        if tokens[pos] == "+" and pos + 1 < len(tokens) and tokens[pos + 1] == "[":
            try:
                sign, coef, left, star, right, close = tokens[pos + 2 : pos + 8]
            except ValueError:
                raise ConfigError(f"{where}: truncated quadratic term") from None
            if star != "*" or close != "]" or sign not in "+-":
                raise ConfigError(f"{where}: malformed quadratic term")
            value = float(coef) * (-1.0 if sign == "-" else 1.0)
            quadratic[(left, right)] = quadratic.get((left, right), 0.0) + value
            pos += 8
            continue
        try:
            sign, coef, var = tokens[pos : pos + 3]
            value = float(coef) * (-1.0 if sign == "-" else 1.0)
        except ValueError:
            raise ConfigError(f"{where}: malformed term near {' '.join(tokens[pos:pos + 3])!r}") from None
        if sign not in "+-":
            raise ConfigError(f"{where}: expected a sign, got {sign!r}")
        linear[var] = linear.get(var, 0.0) + value
        pos += 3
    return linear, quadratic


def parse_model(text: str) -> MiqcpModel:
    objective: dict = {}
    rows = []
    binaries: list = []
    continuous: list = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        where = f"line {lineno}"
        if not line or line.startswith("\\"):
            continue
        if line in ("Minimize", "Subject To", "Bounds", "Binaries", "End"):
            section = line
            continue
        if section == "Minimize":
            name, _, rest = line.partition(":")
            objective, _ = _parse_terms(rest.split(), where)
        elif section == "Subject To":
            name, _, rest = line.partition(":")
            tokens = rest.split()
            if len(tokens) < 2 or tokens[-2] not in ("<=", ">=", "="):
                raise ConfigError(f"{where}: row without a sense")
            linear, quadratic = _parse_terms(tokens[:-2], where)
            rows.append(Row(name.strip(), tokens[-2], float(tokens[-1]), linear, quadratic))
        elif section == "Bounds":
            continuous.append(line.split()[0])
        elif section == "Binaries":
            binaries.extend(line.split())
        else:
            raise ConfigError(f"{where}: text outside of a section")
    if section != "End":
        raise ConfigError("model text does not end with End")
    return MiqcpModel(objective, rows, binaries, continuous)


def evaluate_assignment(model: MiqcpModel, A) -> AssignmentValue:
    """Fix the binaries to A, solve the flow rows for alpha and check every other row."""
    A = np.asarray(A)
    fixed = {}
    for name in model.binaries:
        _, i, j = name.split("_")
        fixed[name] = float(A[int(i) - 1, int(j) - 1])

    index = {name: n for n, name in enumerate(model.continuous)}
    equalities = [row for row in model.rows if row.sense == "="]
    M = np.zeros((len(equalities), len(index)))
    b = np.zeros(len(equalities))
    for r, row in enumerate(equalities):
        b[r] = row.rhs
        for var, coef in row.linear.items():
            if var in fixed:
                b[r] -= coef * fixed[var]
            else:
                M[r, index[var]] += coef
        for (left, right), coef in row.quadratic.items():
            M[r, index[right]] += coef * fixed[left]
    try:
        solution = np.linalg.solve(M, b)
    except np.linalg.LinAlgError:
        return AssignmentValue(False, math.inf, {})
    values = dict(fixed)
    values.update(zip(model.continuous, solution.tolist()))

    feasible = all(v >= -FEASIBILITY_ATOL for v in solution)
    for row in model.rows:
        if row.sense == "=":
            continue
        lhs = sum(coef * values[var] for var, coef in row.linear.items())
        lhs += sum(coef * values[left] * values[right] for (left, right), coef in row.quadratic.items())
        if row.sense == "<=" and lhs > row.rhs + FEASIBILITY_ATOL:
            feasible = False
        if row.sense == ">=" and lhs < row.rhs - FEASIBILITY_ATOL:
            feasible = False
    objective = sum(coef * values[var] for var, coef in model.objective.items())
    return AssignmentValue(feasible, float(objective), {k: values[k] for k in model.continuous})
