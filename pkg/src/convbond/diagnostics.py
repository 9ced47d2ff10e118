"""Named checks over a solved configuration, and the JSON-shaped report.

Checks that depend on refinement solve companion grids with
nx_k = (nx - 1) 2^k + 1 (same for nt), cached on the ``Study``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from .discretization import UNIFORM, build_grid
from .errors import ConvBondError, SolverError
from .free_boundary import (
    FreeBoundaryCurve,
    doubling_check,
    extract_free_boundary,
    growth_stable,
    lower_bound_margin,
    non_degeneracy_check,
    non_degeneracy_stable,
    quadratic_growth_check,
    t_star_gap_report,
    tangency_check,
)
from .lcp import CRANK_NICOLSON, DEFAULT_OMEGA, PriceSurface, boundary_regularity_check, boundary_regularity_shrinks, solve
from .model import ModelParams, exercise_lower_bound
from .oracle import tree_price_at
from .transforms import TransformedSurface, to_transformed

ORACLE_STEPS = 2000
ORACLE_TOL = 0.0025  # fraction of K


@dataclass
class Study:
    """One configuration plus lazily solved refinement levels."""

    params: ModelParams
    nx: int = 200
    nt: int = 200
    spacing: str = UNIFORM
    scheme: str = CRANK_NICOLSON
    tol: float | None = None
    max_iter: int | None = None
    epsilon: float = 0.0
    omega: float = DEFAULT_OMEGA
    _surfaces: dict = field(default_factory=dict, repr=False)
    _curves: dict = field(default_factory=dict, repr=False)

    def sizes(self, level: int) -> tuple[int, int]:
        return (self.nx - 1) * 2**level + 1, (self.nt - 1) * 2**level + 1

    def surface(self, level: int = 0) -> PriceSurface:
        if level not in self._surfaces:
            nx, nt = self.sizes(level)
            grid = build_grid(self.params, nx, nt, self.spacing)
            self._surfaces[level] = solve(
                self.params,
                grid,
                epsilon=self.epsilon,
                scheme=self.scheme,
                tol=self.tol,
                max_iter=self.max_iter,
                omega=self.omega,
            )
        return self._surfaces[level]

    def curve(self, level: int = 0) -> FreeBoundaryCurve:
        if level not in self._curves:
            self._curves[level] = extract_free_boundary(self.surface(level))
        return self._curves[level]

    def transformed(self, level: int = 0) -> TransformedSurface:
        return to_transformed(self.surface(level))

    def settings(self) -> dict[str, object]:
        return {
            "nx": self.nx,
            "nt": self.nt,
            "spacing_kind": self.spacing,
            "scheme": self.scheme,
            "tol": self.tol if self.tol is not None else 1e-10 * self.params.K,
            "max_iter": self.max_iter if self.max_iter is not None else 10 * self.nx,
            "epsilon": self.epsilon,
            "omega": self.omega,
        }


@dataclass
class CheckResult:
    name: str
    claim: str
    hard: bool
    passed: bool
    measured: dict = field(default_factory=dict)
    message: str = ""
    error: str | None = None
    levels: tuple[int, ...] = (0,)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "claim": self.claim,
            "hard": self.hard,
            "verdict": "pass" if self.passed else "fail",
            "measured": self.measured,
            "message": self.message,
            "error": self.error,
            "levels": list(self.levels),
        }


@dataclass
class DiagnosticsReport:
    checks: list[CheckResult]
    params: dict
    settings: dict
    grids: dict
    version: str = __version__

    @property
    def failed(self) -> list[str]:
        """Hard checks that did not pass; measurement-only entries never appear."""
        return [c.name for c in self.checks if c.hard and not c.passed]

    @property
    def passed(self) -> bool:
        return not self.failed

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "params": self.params,
            "settings": self.settings,
            "grids": self.grids,
            "checks": [c.to_dict() for c in self.checks],
            "failed": self.failed,
        }


# -- individual checks ----------------------------------------------------------
# Each returns (passed, measured, message, levels).


def _monotonicity(study: Study):
    s = study.surface()
    K, gamma = study.params.K, study.params.gamma
    V = s.values
    dv_t = np.diff(V, axis=0)
    vx = np.diff(V, axis=1) / np.diff(s.grid.x)
    measured = {
        "min_dV_t": float(dv_t.min()),
        "min_V_x": float(vx.min()),
        "max_V_x": float(vx.max()),
    }
    ok = dv_t.min() >= -1e-8 * K and vx.min() >= -1e-8 and vx.max() <= gamma + 1e-8
    return ok, measured, "V nondecreasing in t, 0 <= V_x <= gamma", (0,)


def _bounds(study: Study):
    s = study.surface()
    p = study.params
    V = s.values
    slack = 1e-10 * p.K
    lower = float((V - s.obstacle).min())
    upper = float((V - p.K).max())
    interior = V[:-1, :-1]
    strict = float(p.K - interior.max())
    ok = lower >= -slack and upper <= slack and strict > 0.0
    return ok, {"min_gap": lower, "max_excess": upper, "min_cap_gap_interior": strict}, "gamma x <= V <= K, V < K inside", (0,)


def _boundary_regularity(study: Study):
    a = boundary_regularity_check(study.surface(0))
    b = boundary_regularity_check(study.surface(1))
    measured = {
        "x2_vxx": [a.x2_vxx, b.x2_vxx],
        "x_vx": [a.x_vx, b.x_vx],
    }
    return boundary_regularity_shrinks(a, b), measured, "x^2 V_xx and x V_x vanish as x -> 0", (0, 1)


def _lower_bound(study: Study):
    curve = study.curve()
    margin = lower_bound_margin(curve)
    h = float(study.surface().grid.h.max())
    measured = {"bound": exercise_lower_bound(study.params), "min_b": float(curve.b.min()), "margin": margin, "h": h}
    return margin >= -h, measured, "b(t) >= c/(q gamma)", (0,)


def _t_star(study: Study):
    a, b = study.curve(0), study.curve(1)
    T = study.params.T
    dt, dt_fine = study.surface(0).grid.dt, study.surface(1).grid.dt
    drift = abs(b.t_star - a.t_star)
    measured = {"t_star": [a.t_star, b.t_star], "gap": T - a.t_star, "drift": drift, "dt_fine": dt_fine}
    ok = T - a.t_star > 2.0 * dt and drift <= 4.0 * dt_fine
    return ok, measured, "touching time strictly before T, stable under refinement", (0, 1)


def _non_degeneracy(study: Study):
    res = [non_degeneracy_check(study.transformed(k), curve=study.curve(k)) for k in (0, 1, 2)]
    ok = all(non_degeneracy_stable(x, y) for x, y in zip(res, res[1:]))
    return ok, {"c0": [r.c0 for r in res]}, "sup over lower cylinders detaches quadratically", (0, 1, 2)


def _quadratic_growth(study: Study):
    res = [quadratic_growth_check(study.transformed(k), curve=study.curve(k)) for k in (0, 1, 2)]
    return growth_stable(res), {"C0": [r.C0 for r in res]}, "sup over cylinders grows at most quadratically", (0, 1, 2)


def _doubling(study: Study):
    r = doubling_check(study.transformed(), curve=study.curve())
    return r.passed, {"S": list(r.S), "C1": r.C1, "holds": list(r.holds)}, "dyadic doubling at the touching point", (0,)


def _tangency(study: Study):
    coarse = tangency_check(study.curve(0))
    fine = tangency_check(study.curve(1), reference=coarse)
    measured = {
        "samples": [list(x) for x in fine.samples],
        "decreasing": [coarse.decreasing, fine.decreasing],
        "smallest": [coarse.smallest, fine.smallest],
        "shrink_ratio": fine.shrink_ratio,
    }
    return fine.verdict, measured, "boundary flatter than any parabola at the touch", (0, 1)


def oracle_spots(params: ModelParams, count: int = 5) -> np.ndarray:
    """Evenly spaced spots in (c/(q gamma), 0.95 K/gamma]."""
    lo, hi = exercise_lower_bound(params), 0.95 * params.x_max
    return lo + (hi - lo) * np.arange(1, count + 1) / count


def _oracle_agreement(study: Study):
    s = study.surface()
    p = study.params
    rows = []
    for x in oracle_spots(p):
        pde = s.at(float(x), 0.0)
        tree = tree_price_at(p, float(x), ORACLE_STEPS)
        rows.append([float(x), pde, tree, abs(pde - tree)])
    worst = max(r[3] for r in rows)
    return worst <= ORACLE_TOL * p.K, {"spots": rows, "worst": worst, "tolerance": ORACLE_TOL * p.K}, "PDE agrees with the lattice", (0,)


def _t_star_gap(study: Study):
    r = t_star_gap_report(study.curve(), study.surface())
    measured = {
        "gap": r.gap,
        "holder_quotient": r.holder_quotient,
        "vx_at_maturity": r.vx_at_maturity,
        "vx_at_touch": r.vx_at_touch,
    }
    return True, measured, "measurement only", (0,)


def _plain(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass(frozen=True)
class Check:
    fn: Callable
    hard: bool


REGISTRY: dict[str, Check] = {
    "monotonicity": Check(_monotonicity, True),
    "bounds": Check(_bounds, True),
    "boundary_regularity": Check(_boundary_regularity, True),
    "lower_bound": Check(_lower_bound, True),
    "t_star": Check(_t_star, True),
    "non_degeneracy": Check(_non_degeneracy, True),
    "quadratic_growth": Check(_quadratic_growth, True),
    "doubling": Check(_doubling, True),
    "tangency": Check(_tangency, True),
    "oracle_agreement": Check(_oracle_agreement, True),
    "t_star_gap": Check(_t_star_gap, False),
}
DEFAULT_CHECKS = tuple(REGISTRY)


def run_check(study: Study, name: str) -> CheckResult:
    check = REGISTRY[name]
    try:
        ok, measured, claim, levels = check.fn(study)
        return CheckResult(name=name, claim=claim, hard=check.hard, passed=bool(ok), measured=measured, levels=levels)
    except SolverError:
        raise
    except ConvBondError as exc:
        # a diagnostic that cannot be measured counts as not passed
        return CheckResult(
            name=name,
            claim="",
            hard=check.hard,
            passed=not check.hard,
            message=str(exc),
            error=exc.code,
            measured={k: _plain(v) for k, v in exc.details.items()},
        )


def run_checks(study: Study, names=DEFAULT_CHECKS) -> DiagnosticsReport:
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)}")
    results = [run_check(study, n) for n in names]
    grids = {str(k): s.grid.metadata() for k, s in sorted(study._surfaces.items())}
    return DiagnosticsReport(checks=results, params=study.params.as_dict(), settings=study.settings(), grids=grids)
