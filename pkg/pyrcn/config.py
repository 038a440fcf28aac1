"""Run configuration: per-command defaults, key=value files and --set overrides."""

import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from pygments import formatters, highlight, lexers

from pyrcn.errors import ConfigError
from pyrcn.netfile import SECTIONS
from pyrcn.utils import get_logger

MODES = ("verbatim_flow", "miqcp_flow")

DEFAULTS: dict[str, dict[str, Any]] = {
    "analyze": {
        "lambda": 1.0,
        "mu": 2.0,
        "K": 1.0,
        "r": 10.0,
        # when set, mu is provisioned for this occupancy instead of read from the config
        "pi_up": None,
    },
    "optimize": {
        "lambda": 36.94,
        "pi_up": 0.9,
        "alpha": 1.0,
        "beta": 1.0,
        "K_max": 100.0,
        "R_star": None,
        "sweep": False,
        "K_step": 0.5,
    },
    "hysteresis": {
        "lambda": 10.0,
        "pi_up": 0.9,
        "K": 11,
        "K_h": [11, 7, 2],
        "t": 4.0,
        "grid_max": 20.0,
        "grid_points": 201,
        "recursions": False,
    },
    "network": {
        "queue_length": False,
        "workers": 1,
        "K": None,
        "optimize_K": False,
        "alpha": 1.0,
        "beta": 1.0,
        "samples": 10000,
    },
    "placement": {
        "method": "prune",
        "accounting": "total",
        "strict": True,
        "workers": 1,
        "export_model": False,
    },
    "reduce": {
        "kind": "partition",
        "values": [1, 1, 2],
        "c": 1.0,
        "weights": [],
        "item_values": [],
        "max_n": 6,
        "max_value": 4,
        "knapsack_max_n": 6,
        "knapsack_trials": 50,
    },
    "simulate": {
        "kind": "counter",
        "lambda": 1.0,
        "mu": 2.0,
        "K": 1.0,
        "K_h": None,
        "horizon": None,
        "horizon_kind": None,
        "warmup": 0.2,
        "replications": 1,
        "batches": 30,
        "workers": 1,
        "accounting": "total",
        "live": False,
        "K_h_gap": 0,
    },
}

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def parse_value(text: str) -> Any:
    """int, float, bool, None or a comma separated list of those; anything else stays a string."""
    text = text.strip()
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_assignment(text: str, where: str = "--set") -> tuple[str, Any]:
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not _KEY.match(key):
        raise ConfigError(f"{where}: expected key=value, got {text!r}")
    return key, parse_value(value)


def parse_overrides(items) -> dict[str, Any]:
    return dict(parse_assignment(item) for item in items or ())


def is_network_file(text: str) -> bool:
    headers = re.findall(r"^\s*\[\s*([A-Za-z_]+)\s*\]", text, flags=re.MULTILINE)
    return any(h.lower() in SECTIONS for h in headers)


def read_config_file(path) -> dict[str, Any]:
    """key=value lines; '#' starts a comment and [section] headers are ignored."""
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line or (line.startswith("[") and line.endswith("]")):
                continue
            key, value = parse_assignment(line, f"{path}:{lineno}")
            values[key] = value
    return values


def _coerce(key: str, value: Any, default: Any) -> Any:
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, list):
        return value if isinstance(value, list) else [value]
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


@dataclass(frozen=True)
class RunSpec:
    command: str
    inputs: tuple[Path, ...] = ()
    out: Optional[Path] = None
    overrides: tuple[tuple[str, Any], ...] = ()
    seed: int = 0
    mode: str = "verbatim_flow"
    settings: dict = field(default_factory=dict, compare=False)
    network: Optional[Path] = None

    @classmethod
    def resolve(cls, command, inputs=(), out=None, overrides=None, seed=0, mode="verbatim_flow") -> "RunSpec":
        """Defaults, then key=value input files in order, then overrides. Unknown keys are rejected."""
        if command not in DEFAULTS:
            raise ConfigError(f"unknown command {command!r}")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {mode!r}")
        known = DEFAULTS[command]
        settings = dict(known)
        network = None
        layers = []
        for path in inputs or ():
            path = Path(path)
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as e:
                raise ConfigError(f"cannot read {path}: {e.strerror}") from e
            if is_network_file(text):
                if network is not None:
                    raise ConfigError(f"more than one network file: {network}, {path}")
                network = path
            else:
                layers.append((str(path), read_config_file(path)))
        overrides = dict(overrides or {})
        layers.append(("--set", overrides))
        for where, values in layers:
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f"{where}: unknown key {key!r} for {command}, known: {', '.join(known)}")
                settings[key] = _coerce(key, value, known[key])
        return cls(
            command=command,
            inputs=tuple(Path(p) for p in inputs or ()),
            out=Path(out) if out is not None else None,
            overrides=tuple(sorted(overrides.items())),
            seed=int(seed),
            mode=mode,
            settings=settings,
            network=network,
        )

    def __getitem__(self, key):
        return self.settings[key]

    def as_dict(self) -> dict:
        def plain(value):
            if isinstance(value, float) and not math.isfinite(value):
                return str(value)
            if isinstance(value, list):
                return [plain(v) for v in value]
            return value

        return {
            "command": self.command,
            "inputs": [str(p) for p in self.inputs],
            "network": str(self.network) if self.network else None,
            "out": str(self.out) if self.out else None,
            "seed": self.seed,
            "mode": self.mode,
            "settings": {key: plain(value) for key, value in self.settings.items()},
        }


def echo(spec: RunSpec, fp=None) -> None:
    """Print the resolved configuration as JSON, highlighted when the stream is a terminal."""
    fp = fp if fp is not None else sys.stderr
    formatted_json = json.dumps(spec.as_dict(), indent=2)
    if fp.isatty():
        formatted_json = highlight(formatted_json, lexers.JsonLexer(), formatters.TerminalFormatter())
    print(formatted_json, file=fp)
    get_logger(__name__).debug(f"Resolved configuration for {spec.command}")
