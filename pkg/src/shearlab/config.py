"""Experiment configuration: flat TOML sections with a fixed, typed schema."""

from __future__ import annotations

import hashlib
import math
import re
import sys
from dataclasses import dataclass, field, fields
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

ENGINES = (
    "spectral-scan",
    "gevrey-scan",
    "mc-inverse-moment",
    "mc-skorokhod",
    "feynman-kac-check",
    "bound-crosscheck",
    "full-report",
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f"line {line}: " if line else ""
        super().__init__(where + message)


class ConfigSyntaxError(ConfigError):
    pass


class UnknownKeyError(ConfigError):
    pass


class TypeMismatchError(ConfigError):
    pass


class InvariantError(ConfigError):
    pass


# section -> key -> (kind, default); a default of REQUIRED must be given
REQUIRED = object()
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "experiment": {
        "name": ("str", "experiment"),
        "engine": ("str", REQUIRED),
        "seed": ("int", REQUIRED),
        "output_dir": ("str", "runs/experiment"),
        "runs": ("str_list", []),
    },
    "profile": {
        "preset": ("str", None),
        "modes": ("modes", None),
        "name": ("str", None),
    },
    "grids": {
        "nu_grid": ("float_list", []),
        "k_grid": ("int_list", []),
        "t_grid": ("float_list", []),
        "y_grid": ("float_list", []),
        "x_grid": ("float_list", []),
        "k_ref": ("int", 1),
        "nu_ref": ("float", None),
        "t_ref": ("float", None),
        "nonvacuous_t": ("float_list", []),
    },
    "numerics": {
        "n_y": ("int", 128),
        "n_steps": ("int", None),
        "n_samples": ("int", None),
        "p": ("int", 1),
        "theta": ("float", 0.5),
        "n_boot": ("int", 200),
        "resolution_check": ("bool", False),
    },
    "initial": {
        "f0": ("f0", None),
    },
    "tolerances": {
        "spectral_slope": ("float", 0.1),
        "mc_slope": ("float", 0.5),
        "mc_nu_slope": ("float", 0.3),
        "nu_tilde": ("float", 0.01),
        "gevrey_r2": ("float", 0.95),
        "fk_sigma": ("float", 3.0),
        "resolution_rtol": ("float", 1e-2),
    },
}


@dataclass
class ExperimentConfig:
    engine: str
    seed: int
    name: str = "experiment"
    output_dir: str = "runs/experiment"
    runs: list = field(default_factory=list)
    profile_preset: Optional[str] = None
    profile_modes: Optional[list] = None
    profile_name: Optional[str] = None
    nu_grid: list = field(default_factory=list)
    k_grid: list = field(default_factory=list)
    t_grid: list = field(default_factory=list)
    y_grid: list = field(default_factory=list)
    x_grid: list = field(default_factory=list)
    k_ref: int = 1
    nu_ref: Optional[float] = None
    t_ref: Optional[float] = None
    nonvacuous_t: list = field(default_factory=list)
    n_y: int = 128
    n_steps: Optional[int] = None
    n_samples: Optional[int] = None
    p: int = 1
    theta: float = 0.5
    n_boot: int = 200
    resolution_check: bool = False
    f0: Optional[list] = None
    tolerances: dict = field(default_factory=dict)

    def profile(self):
        from .profiles import ShearProfile, preset

        if self.profile_modes is not None:
            return ShearProfile.from_modes(self.profile_modes, name=self.profile_name or "custom")
        return preset(self.profile_preset)

    @property
    def label(self) -> str:
        return self.profile_name or self.profile_preset or "custom"

    def tol(self, key: str) -> float:
        return self.tolerances.get(key, SCHEMA["tolerances"][key][1])

    def to_sections(self) -> dict:
        sections: dict[str, dict] = {}
        for section, keys in SCHEMA.items():
            out = {}
            for key in keys:
                value = self.tolerances.get(key) if section == "tolerances" else getattr(self, _attr(section, key))
                if value is None:
                    continue
                out[key] = value
            if out:
                sections[section] = out
        return sections

    def canonical(self) -> str:
        return emit_config(self)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _attr(section: str, key: str) -> str:
    if section == "profile":
        return "profile_" + key
    return key


def _line_of(text: str, section: Optional[str], key: Optional[str] = None) -> Optional[int]:
    current = None
    for number, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            if key is None and current == section:
                return number
            continue
        if key is not None and current == section and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return number
    return None


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(kind: str, value, where: str, line: Optional[int]):
    def bad(expected):
        raise TypeMismatchError(f"{where}: expected {expected}, got {type(value).__name__} {value!r}", line)

    if kind == "str":
        return value if isinstance(value, str) else bad("a string")
    if kind == "bool":
        return value if isinstance(value, bool) else bad("a boolean")
    if kind == "int":
        return value if isinstance(value, int) and not isinstance(value, bool) else bad("an integer")
    if kind == "float":
        return float(value) if _is_num(value) else bad("a number")
    if kind in ("float_list", "int_list", "str_list"):
        if not isinstance(value, list):
            bad("a list")
        out = []
        for item in value:
            if kind == "float_list" and _is_num(item):
                out.append(float(item))
            elif kind == "int_list" and isinstance(item, int) and not isinstance(item, bool):
                out.append(item)
            elif kind == "str_list" and isinstance(item, str):
                out.append(item)
            else:
                bad(f"a list of {kind.split('_')[0]}s")
        return out
    if kind == "modes":
        if not isinstance(value, list) or not all(
                isinstance(r, list) and len(r) == 3 and all(_is_num(v) for v in r) for r in value):
            bad("a list of [m, a_m, b_m] triples")
        return [[int(r[0]) if float(r[0]).is_integer() else r[0], float(r[1]), float(r[2])] for r in value]
    if kind == "f0":
        if not isinstance(value, list) or not all(
                isinstance(r, list) and len(r) == 4 and all(_is_num(v) for v in r) for r in value):
            bad("a list of [k, eta, re, im] rows")
        return [[int(r[0]), int(r[1]), float(r[2]), float(r[3])] for r in value]
    raise AssertionError(kind)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises the first ConfigError with its line number."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise ConfigSyntaxError(str(exc), int(match.group(1)) if match else None) from None

    values: dict[str, Any] = {}
    tolerances: dict[str, float] = {}
    for section, body in raw.items():
        if section not in SCHEMA:
            raise UnknownKeyError(f"unknown section [{section}]", _line_of(text, section))
        if not isinstance(body, dict):
            raise TypeMismatchError(f"{section} must be a [section]", _line_of(text, None, section))
        for key, value in body.items():
            line = _line_of(text, section, key)
            if key not in SCHEMA[section]:
                raise UnknownKeyError(f"unknown key {key!r} in [{section}]", line)
            kind = SCHEMA[section][key][0]
            coerced = _coerce(kind, value, f"{section}.{key}", line)
            if section == "tolerances":
                tolerances[key] = coerced
            else:
                values[_attr(section, key)] = (coerced, line)

    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if default is REQUIRED and _attr(section, key) not in values:
                raise InvariantError(f"missing required key {section}.{key}", _line_of(text, section))

    cfg = ExperimentConfig(**{k: v for k, (v, _) in values.items()}, tolerances=tolerances)
    validate(cfg, lambda attr: values.get(attr, (None, None))[1])
    return cfg


def validate(cfg: ExperimentConfig, line_of=lambda attr: None) -> None:
    def fail(attr, message):
        raise InvariantError(message, line_of(attr))

    if cfg.engine not in ENGINES:
        fail("engine", f"unknown engine {cfg.engine!r}; expected one of {list(ENGINES)}")
    if not 0 <= cfg.seed < 2**64:
        fail("seed", "seed must be a 64-bit unsigned integer")
    for attr in ("nu_grid", "t_grid"):
        if any(not (v > 0 and math.isfinite(v)) for v in getattr(cfg, attr)):
            fail(attr, f"{attr} values must be positive")
    if any(v > 1 for v in cfg.nu_grid):
        fail("nu_grid", "nu_grid values must be <= 1")
    if any(k < 1 for k in cfg.k_grid):
        fail("k_grid", "k_grid values must be integers >= 1")
    if cfg.k_ref < 1:
        fail("k_ref", "k_ref must be >= 1")
    if cfg.nu_ref is not None and not 0 < cfg.nu_ref <= 1:
        fail("nu_ref", "nu_ref must lie in (0, 1]")
    if cfg.t_ref is not None and not cfg.t_ref > 0:
        fail("t_ref", "t_ref must be positive")
    if not 0 < cfg.theta < 1:
        fail("theta", "theta must lie in (0, 1)")
    if cfg.n_y < 4 or cfg.n_y & (cfg.n_y - 1):
        fail("n_y", "n_y must be a power of two >= 4")
    if cfg.n_steps is not None and cfg.n_steps < 1:
        fail("n_steps", "n_steps must be >= 1")
    if cfg.n_samples is not None and cfg.n_samples < 1:
        fail("n_samples", "n_samples must be >= 1")
    if cfg.p not in (1, 2):
        fail("p", "p must be 1 or 2")
    if cfg.n_boot < 10:
        fail("n_boot", "n_boot must be >= 10")
    if cfg.engine != "full-report":
        if (cfg.profile_preset is None) == (cfg.profile_modes is None):
            fail("profile_preset", "[profile] needs exactly one of preset or modes")
        try:
            cfg.profile()
        except ValueError as exc:
            fail("profile_preset" if cfg.profile_preset else "profile_modes", str(exc))

    need = {
        "spectral-scan": ("nu_grid", "k_grid"),
        "gevrey-scan": ("k_grid",),
        "mc-inverse-moment": ("t_grid", "y_grid"),
        "mc-skorokhod": ("t_grid", "y_grid"),
        "feynman-kac-check": ("x_grid", "y_grid", "t_grid"),
        "bound-crosscheck": ("t_grid",),
        "full-report": ("runs",),
    }[cfg.engine]
    for attr in need:
        if not getattr(cfg, attr):
            fail(attr, f"engine {cfg.engine} needs a non-empty {attr}")
    if cfg.engine != "full-report" and cfg.nu_ref is None:
        fail("nu_ref", f"engine {cfg.engine} needs grids.nu_ref")
    if cfg.engine == "feynman-kac-check":
        if len(cfg.x_grid) != len(cfg.y_grid):
            fail("x_grid", "x_grid and y_grid must pair up point by point")
        if cfg.f0 is None:
            fail("f0", "feynman-kac-check needs [initial] f0")
        try:
            datum_from_rows(cfg.f0)
        except ValueError as exc:
            fail("f0", str(exc))
    for key, value in cfg.tolerances.items():
        if not value > 0:
            raise InvariantError(f"tolerance {key} must be positive")


def datum_from_rows(rows):
    from .stochastic import FourierDatum

    return FourierDatum([(k, eta, complex(re_, im_)) for k, eta, re_, im_ in rows])


def emit_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_sections())


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
