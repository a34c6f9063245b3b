"""Run configuration: a flat TOML document with a fixed key list.

The canonical form is one ``key = value`` line per key in sorted order.  The
SHA-256 digest of the canonical lines, leaving out keys that only say where
or how fast to run, is written as the first line of every output file.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import tomli

from .errors import ConfigError

__all__ = ["REQUIRED", "OPTIONAL", "UNHASHED", "RunConfig", "load_config", "parse_config", "apply_overrides"]

# manifest keys of the tube solver and their types
REQUIRED = {
    "n": int,
    "p": float,
    "k": int,
    "R": float,
    "eps": float,
    "i_max": int,
    "N": int,
    "N0": int,
    "M": float,
    "nt": int,
    "nz": int,
    "tol": float,
}

OPTIONAL = {
    "curve": (str, "circle"),
    "ellipse_b": (float, 0.8),
    "family": (str, "circle"),
    "radial_grid": (int, 4096),
    "spectrum_count": (int, 200),
    "eps_lo": (float, 0.05),
    "eps_hi": (float, 0.3),
    "count": (int, 6),
    "spacing": (str, "log"),
    "eps_min": (float, 0.01),
    "eps_max": (float, 1.0),
    "budget": (int, 50),
    "oracle_grid": (int, 4096),
    "seed": (int, 0),
    "workers": (int, 1),
    "out": (str, "out"),
    "fixtures": (str, "tests/fixtures"),
}

# output locations and parallelism do not change any result
UNHASHED = ("out", "fixtures", "workers")


def _coerce(key: str, value, typ):
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ is str and isinstance(value, str):
        return value
    raise ConfigError(f"key '{key}' expects {typ.__name__}, got {value!r}")


def _format(value) -> str:
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ConfigError(f"non-finite value {value!r}")
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError as exc:
            raise AttributeError(key) from exc

    def canonical(self, hashed_only: bool = False) -> str:
        keys = [k for k in sorted(self.values) if not (hashed_only and k in UNHASHED)]
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in keys)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical(hashed_only=True).encode()).hexdigest()

    @property
    def header(self) -> str:
        return f"# config_hash={self.digest}"

    def replace(self, **changes) -> "RunConfig":
        vals = dict(self.values)
        vals.update(changes)
        return parse_config(vals)


def parse_config(raw: dict) -> RunConfig:
    """Validate a mapping: every required key present, no unknown keys, types coerced."""
    unknown = sorted(set(raw) - set(REQUIRED) - set(OPTIONAL))
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}'")
    vals = {}
    for key, typ in REQUIRED.items():
        if key not in raw:
            raise ConfigError(f"missing required key '{key}'")
        vals[key] = _coerce(key, raw[key], typ)
    for key, (typ, default) in OPTIONAL.items():
        vals[key] = _coerce(key, raw.get(key, default), typ)
    if vals["spacing"] not in ("log", "linear"):
        raise ConfigError("key 'spacing' must be 'log' or 'linear'")
    if vals["curve"] not in ("circle", "line", "ellipse"):
        raise ConfigError("key 'curve' must be one of circle, line, ellipse")
    if vals["workers"] < 1:
        raise ConfigError("key 'workers' must be at least 1")
    if vals["family"] not in ("circle", "torus", "sphere"):
        raise ConfigError("key 'family' must be one of circle, torus, sphere")
    return RunConfig(vals)


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key=value`` strings; values are read as TOML scalars, else as strings."""
    out = dict(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, text = (s.strip() for s in item.split("=", 1))
        try:
            value = tomli.loads(f"v = {text}")["v"]
        except tomli.TOMLDecodeError:
            value = text
        out[key] = value
    return out


def load_config(path, overrides=None) -> RunConfig:
    try:
        raw = tomli.loads(Path(path).read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for key, value in raw.items():
        if isinstance(value, (dict, list)):
            raise ConfigError(f"key '{key}' must be a scalar (the document is flat)")
    return parse_config(apply_overrides(raw, overrides))
