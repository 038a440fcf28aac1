"""Reader and writer for the plain-text network description.

::

    [topology]      # "h i" directed edge, "h i both" for both directions
    [caches]        # "i s_i eta_i", "inf" for unbounded
    [files]         # "f t_f"
    [demand]        # "i f rate"
    [availability]  # "i f pi", missing entries are 0

Ids are 1-based.
"""

import math
from pathlib import Path
from typing import Optional

import numpy as np

from pyrcn.errors import ConfigError
from pyrcn.network import AvailabilityProfile, CacheNetwork
from pyrcn.utils import format_float, get_logger

SECTIONS = ("topology", "caches", "files", "demand", "availability")


def _number(token, where):
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"{where}: not a number: {token!r}") from None


def _index(token, where):
    try:
        value = int(token)
    except ValueError:
        raise ConfigError(f"{where}: not an id: {token!r}") from None
    if value < 1:
        raise ConfigError(f"{where}: ids start at 1, got {value}")
    return value - 1


def parse_network(text: str, source: str = "<string>") -> tuple[CacheNetwork, Optional[AvailabilityProfile]]:
    rows: dict[str, list] = {name: [] for name in SECTIONS}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if section is None:
            raise ConfigError(f"{where}: entry outside of a section")
        rows[section].append((where, line.split()))

    caches = {}
    for where, tok in rows["caches"]:
        if len(tok) != 3:
            raise ConfigError(f"{where}: expected 'i s_i eta_i'")
        caches[_index(tok[0], where)] = (_number(tok[1], where), _number(tok[2], where))
    files = {}
    for where, tok in rows["files"]:
        if len(tok) != 2:
            raise ConfigError(f"{where}: expected 'f t_f'")
        files[_index(tok[0], where)] = _number(tok[1], where)
    if not caches or not files:
        raise ConfigError(f"{source}: [caches] and [files] must not be empty")

    C, F = max(caches) + 1, max(files) + 1
    missing = sorted(set(range(C)) - set(caches))
    if missing:
        raise ConfigError(f"{source}: cache {missing[0] + 1} is not described")
    missing = sorted(set(range(F)) - set(files))
    if missing:
        raise ConfigError(f"{source}: file {missing[0] + 1} is not described")

    M = np.zeros((C, C), dtype=int)
    for where, tok in rows["topology"]:
        if len(tok) not in (2, 3) or (len(tok) == 3 and tok[2] != "both"):
            raise ConfigError(f"{where}: expected 'h i' or 'h i both'")
        h, i = _index(tok[0], where), _index(tok[1], where)
        if h >= C or i >= C:
            raise ConfigError(f"{where}: unknown cache")
        M[h, i] = 1
        if len(tok) == 3:
            M[i, h] = 1

    def matrix(name, default):
        out = np.full((C, F), default)
        for where, tok in rows[name]:
            if len(tok) != 3:
                raise ConfigError(f"{where}: expected 'i f value'")
            i, f = _index(tok[0], where), _index(tok[1], where)
            if i >= C or f >= F:
                raise ConfigError(f"{where}: unknown cache or file")
            out[i, f] = _number(tok[2], where)
        return out

    net = CacheNetwork(
        M=M,
        s=np.array([caches[i][0] for i in range(C)]),
        eta=np.array([caches[i][1] for i in range(C)]),
        lambda_ext=matrix("demand", 0.0),
        t=np.array([files[f] for f in range(F)]),
    )
    profile = AvailabilityProfile(matrix("availability", 0.0)) if rows["availability"] else None
    get_logger(__name__).debug(f"Read network {source}: C={C}, F={F}, {int(M.sum())} links")
    return net, profile


def read_network(path) -> tuple[CacheNetwork, Optional[AvailabilityProfile]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read network file {path}: {e}") from e
    return parse_network(text, str(path))


def _value(x):
    return "inf" if math.isinf(x) else format_float(x)


def format_network(net: CacheNetwork, profile: Optional[AvailabilityProfile] = None) -> str:
    lines = ["[topology]"]
    for h, i in zip(*np.nonzero(net.M)):
        lines.append(f"{h + 1} {i + 1}")
    lines.append("")
    lines.append("[caches]")
    for i in range(net.C):
        lines.append(f"{i + 1} {_value(net.s[i])} {_value(net.eta[i])}")
    lines.append("")
    lines.append("[files]")
    for f in range(net.F):
        lines.append(f"{f + 1} {_value(net.t[f])}")
    lines.append("")
    lines.append("[demand]")
    for i, f in zip(*np.nonzero(net.lambda_ext)):
        lines.append(f"{i + 1} {f + 1} {_value(net.lambda_ext[i, f])}")
    if profile is not None:
        lines.append("")
        lines.append("[availability]")
        for i, f in zip(*np.nonzero(profile.pi)):
            lines.append(f"{i + 1} {f + 1} {_value(profile.pi[i, f])}")
    return "\n".join(lines) + "\n"


def write_network(path, net: CacheNetwork, profile: Optional[AvailabilityProfile] = None):
    Path(path).write_text(format_network(net, profile))
