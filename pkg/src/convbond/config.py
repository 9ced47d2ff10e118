"""Run configuration read from a flat TOML file.

Parsing is strict: any key outside the known set is an error, so a typo such
as ``vol = 0.3`` can never fall back silently to a default.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .diagnostics import DEFAULT_CHECKS, REGISTRY, Study
from .discretization import MIN_NODES, SPACINGS, UNIFORM
from .errors import ConfigError
from .lcp import CRANK_NICOLSON, DEFAULT_OMEGA, SCHEMES
from .model import FIELDS, ModelParams, validate

DEFAULT_MODEL = {"sigma": 0.3, "r": 0.05, "q": 0.03, "c": 2.0, "gamma": 1.0, "K": 100.0, "T": 1.0}
RUN_KEYS = ("nx", "nt", "spacing_kind", "scheme", "tol", "max_iter", "epsilon", "omega", "checks", "output_dir")


@dataclass
class RunConfig:
    params: ModelParams = field(default_factory=lambda: ModelParams(**DEFAULT_MODEL))
    nx: int = 200
    nt: int = 200
    spacing_kind: str = UNIFORM
    scheme: str = CRANK_NICOLSON
    tol: float | None = None
    max_iter: int | None = None
    epsilon: float = 0.0
    omega: float = DEFAULT_OMEGA
    checks: tuple[str, ...] = DEFAULT_CHECKS
    output_dir: str = "out"

    def study(self, nx: int | None = None, nt: int | None = None) -> Study:
        return Study(
            params=self.params,
            nx=self.nx if nx is None else nx,
            nt=self.nt if nt is None else nt,
            spacing=self.spacing_kind,
            scheme=self.scheme,
            tol=self.tol,
            max_iter=self.max_iter,
            epsilon=self.epsilon,
            omega=self.omega,
        )

    def as_dict(self) -> dict[str, Any]:
        out = {k: v for k, v in asdict(self).items() if k != "params"}
        out["checks"] = list(self.checks)
        out.update(self.params.as_dict())
        return out


def _number(raw: Mapping[str, Any], key: str, kind: type):
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}", key=key)
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key} must be an integer, got {value!r}", key=key)
        return int(value)
    return float(value)


def parse_checks(value: Any) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
        raise ConfigError("checks must be a list of names", key="checks")
    unknown = [v for v in value if v not in REGISTRY]
    if unknown:
        raise ConfigError(f"unknown checks: {', '.join(unknown)}; known: {', '.join(REGISTRY)}", unknown=unknown)
    return tuple(value)


def from_mapping(raw: Mapping[str, Any]) -> RunConfig:
    """Validate a flat mapping; model keys not given take the reference values."""
    unknown = sorted(set(raw) - set(FIELDS) - set(RUN_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}", unknown=unknown)
    model = dict(DEFAULT_MODEL)
    model.update({k: raw[k] for k in FIELDS if k in raw})
    params = validate(model)

    cfg = RunConfig(params=params)
    for key in ("nx", "nt", "max_iter"):
        if key in raw:
            setattr(cfg, key, _number(raw, key, int))
    for key in ("tol", "epsilon", "omega"):
        if key in raw:
            setattr(cfg, key, _number(raw, key, float))
    if "spacing_kind" in raw:
        cfg.spacing_kind = str(raw["spacing_kind"])
    if "scheme" in raw:
        cfg.scheme = str(raw["scheme"])
    if "checks" in raw:
        cfg.checks = parse_checks(raw["checks"])
    if "output_dir" in raw:
        cfg.output_dir = str(raw["output_dir"])

    if cfg.nx < MIN_NODES or cfg.nt < MIN_NODES:
        raise ConfigError(f"nx and nt must be >= {MIN_NODES}")
    if cfg.spacing_kind not in SPACINGS[:2]:
        raise ConfigError(f"spacing_kind must be one of {SPACINGS[:2]}", key="spacing_kind")
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {tuple(SCHEMES)}", key="scheme")
    if cfg.tol is not None and cfg.tol <= 0.0:
        raise ConfigError("tol must be > 0", key="tol")
    if cfg.max_iter is not None and cfg.max_iter < 1:
        raise ConfigError("max_iter must be >= 1", key="max_iter")
    if cfg.epsilon < 0.0:
        raise ConfigError("epsilon must be >= 0", key="epsilon")
    if not 0.0 < cfg.omega < 2.0:
        raise ConfigError("omega must lie in (0, 2)", key="omega")
    return cfg


def load(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return from_mapping(raw)
