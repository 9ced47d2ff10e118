"""Backward time marching of the obstacle problem with projected SOR.

Each time step solves the linear complementarity problem

    min(M V - b, V - gamma x) = 0,  V <= K,

where M = I + theta*dt*A.  The x = 0 node follows the exact solution of
dV/dtau = c - rV when epsilon == 0, and the node x = K/gamma is pinned to K.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .discretization import Grid, OperatorStencil, assemble_operator, central_weights
from .errors import InsufficientResolution, NoConvergence, ObstacleViolation
from .model import ModelParams

logger = logging.getLogger(__name__)

CRANK_NICOLSON = "crank-nicolson"
IMPLICIT_EULER = "implicit-euler"
SCHEMES = {CRANK_NICOLSON: 0.5, IMPLICIT_EULER: 1.0}
DEFAULT_OMEGA = 1.5
BOUND_SLACK = 1e-10  # relative to K


@numba.njit(cache=True)
def _psor(sub, diag, sup, rhs, lo, hi, x, omega, tol, max_iter):
    """Projected SOR, in place on x.

    Stops once a sweep moves no component by more than tol *and* the
    row-normalised complementarity residual is below tol.  Returns
    (sweeps, residual, worst_row); sweeps is -1 on failure.
    """
    n = x.size
    res = np.inf
    worst = -1
    for sweep in range(max_iter):
        step = 0.0
        for i in range(n):
            s = rhs[i]
            if i > 0:
                s -= sub[i] * x[i - 1]
            if i < n - 1:
                s -= sup[i] * x[i + 1]
            y = x[i] + omega * (s / diag[i] - x[i])
            if y < lo[i]:
                y = lo[i]
            elif y > hi[i]:
                y = hi[i]
            d = abs(y - x[i])
            if d > step:
                step = d
            x[i] = y
        if step <= tol:
            res = 0.0
            worst = -1
            for i in range(n):
                m = diag[i] * x[i] - rhs[i]
                if i > 0:
                    m += sub[i] * x[i - 1]
                if i < n - 1:
                    m += sup[i] * x[i + 1]
                m /= diag[i]
                v = min(m, x[i] - lo[i])
                v = max(v, x[i] - hi[i])
                if abs(v) > res:
                    res = abs(v)
                    worst = i
            if res <= tol:
                return sweep + 1, res, worst
    return -1, res, worst


@dataclass(frozen=True)
class ComplementarityResidual:
    """Worst row of max(min(L_h V - c, V - gamma x), V - K) for one step.

    The equation branch is row-normalised (divided by the diagonal of the
    step matrix) so the residual is in cash and comparable to the tolerance.
    ``location`` is (time index, space index).
    """

    max_abs: float
    location: tuple[int, int]


@dataclass(frozen=True, eq=False)
class PriceSurface:
    """Bond values V[n, i] at (t_n, x_i), ordered by increasing t."""

    values: np.ndarray
    grid: Grid
    params: ModelParams
    epsilon: float = 0.0
    scheme: str = IMPLICIT_EULER
    tol: float = 0.0
    residuals: tuple[ComplementarityResidual, ...] = ()
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    # intermediate Rannacher half-step slices keyed by the time index they start from
    substeps: dict = field(default_factory=dict)
    omega: float = DEFAULT_OMEGA

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.nt, self.grid.nx):
            raise ValueError(f"values shape {values.shape} does not match grid {(self.grid.nt, self.grid.nx)}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def obstacle(self) -> np.ndarray:
        return self.params.gamma * self.grid.x

    @property
    def gap(self) -> np.ndarray:
        """V - gamma x."""
        return self.values - self.obstacle

    def at(self, x: float, t: float) -> float:
        """Bilinear interpolation of V at (x, t)."""
        xs, ts = self.grid.x, self.grid.t
        n = int(np.clip(np.searchsorted(ts, t) - 1, 0, ts.size - 2))
        w = (t - ts[n]) / (ts[n + 1] - ts[n])
        lower = np.interp(x, xs, self.values[n])
        upper = np.interp(x, xs, self.values[n + 1])
        return float((1.0 - w) * lower + w * upper)


def _step_plan(scheme: str, nt: int):
    """(dt fraction, theta) pairs per interval, keyed by the later time index."""
    theta = SCHEMES[scheme]
    plans = {}
    for n in range(nt - 1):
        if scheme == CRANK_NICOLSON and n == nt - 2:
            # Rannacher start: the terminal slice meets the obstacle with a kink
            plans[n] = ((0.5, 1.0), (0.5, 1.0))
        else:
            plans[n] = ((1.0, theta),)
    return plans


def _ode_step(params: ModelParams, v0: float, dtau: float) -> float:
    # exact flow of dV/dtau = c - rV over dtau
    return v0 + (v0 - params.c / params.r) * np.expm1(-params.r * dtau)


def _step_system(params, grid, stencil, V_old, dtau, theta, first):
    """Matrix rows and right-hand side for unknowns first..nx-2."""
    nx = grid.nx
    idx = slice(first, nx - 1)
    a = theta * dtau
    AV = stencil.apply(V_old)
    rhs = V_old[idx] - (1.0 - theta) * dtau * AV[idx] + dtau * params.c
    sub = a * stencil.sub[idx].copy()
    diag = 1.0 + a * stencil.diag[idx]
    sup = a * stencil.sup[idx].copy()
    return sub, diag, sup, rhs


def _march(params, grid, stencil, V_old, dtau, theta, tol, max_iter, omega):
    nx = grid.nx
    K = params.K
    first = 1 if stencil.degenerate_origin else 0
    sub, diag, sup, rhs = _step_system(params, grid, stencil, V_old, dtau, theta, first)
    V_new = np.empty(nx)
    V_new[-1] = K
    if first:
        V_new[0] = _ode_step(params, V_old[0], dtau)
        rhs[0] -= sub[0] * V_new[0]
    rhs[-1] -= sup[-1] * K
    sub[0] = 0.0
    sup[-1] = 0.0
    lo = params.gamma * grid.x[first:-1]
    hi = np.full(lo.size, K)
    guess = np.clip(V_old[first:-1], lo, hi)
    sweeps, res, worst = _psor(sub, diag, sup, rhs, lo, hi, guess, omega, tol, max_iter)
    V_new[first:-1] = guess
    return V_new, sweeps, res, (worst + first if worst >= 0 else -1)


def solve(
    params: ModelParams,
    grid: Grid,
    epsilon: float = 0.0,
    scheme: str = CRANK_NICOLSON,
    tol: float | None = None,
    max_iter: int | None = None,
    omega: float = DEFAULT_OMEGA,
) -> PriceSurface:
    """Price the bond on ``grid`` by backward marching from V(x, T) = K.

    tol defaults to 1e-10*K and max_iter to 10*nx PSOR sweeps per step.
    Raises NoConvergence when a step exhausts max_iter and ObstacleViolation
    if the final surface leaves [gamma x, K].
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {sorted(SCHEMES)}")
    if not 0.0 < omega < 2.0:
        raise ValueError("omega must lie in (0, 2)")
    tol = 1e-10 * params.K if tol is None else float(tol)
    if tol <= 0.0:
        raise ValueError("tol must be > 0")
    max_iter = 10 * grid.nx if max_iter is None else int(max_iter)

    stencil = assemble_operator(params, grid, epsilon)
    nt, nx = grid.nt, grid.nx
    values = np.empty((nt, nx))
    values[-1] = params.K
    iterations = np.zeros(nt, dtype=int)
    residuals: list[ComplementarityResidual] = [None] * nt  # type: ignore[list-item]
    residuals[-1] = ComplementarityResidual(0.0, (nt - 1, 0))
    substeps = {}

    for n, plan in sorted(_step_plan(scheme, nt).items(), reverse=True):
        dtau_full = grid.t[n + 1] - grid.t[n]
        V = values[n + 1]
        worst = ComplementarityResidual(0.0, (n, 0))
        total = 0
        for k, (fraction, theta) in enumerate(plan):
            if k > 0:
                substeps[n] = V.copy()
            V, sweeps, res, row = _march(params, grid, stencil, V, fraction * dtau_full, theta, tol, max_iter, omega)
            if sweeps < 0:
                raise NoConvergence(
                    f"PSOR did not converge at t={grid.t[n]:.6g} (step {n}): residual {res:.3e} > tol {tol:.3e} "
                    f"after {max_iter} sweeps",
                    step=n,
                    residual=float(res),
                )
            total += sweeps
            if res > worst.max_abs:
                worst = ComplementarityResidual(float(res), (n, int(row)))
        values[n] = V
        iterations[n] = total
        residuals[n] = worst

    slack = BOUND_SLACK * params.K
    below = params.gamma * grid.x - values
    if below.max() > slack or (values - params.K).max() > slack:
        raise ObstacleViolation(
            f"surface leaves [gamma x, K]: worst undershoot {below.max():.3e}, overshoot {(values - params.K).max():.3e}"
        )
    logger.debug("solved nx=%d nt=%d scheme=%s sweeps=%d", nx, nt, scheme, iterations.sum())
    return PriceSurface(
        values=values,
        grid=grid,
        params=params,
        epsilon=float(epsilon),
        scheme=scheme,
        tol=tol,
        residuals=tuple(residuals),
        iterations=iterations,
        substeps=substeps,
        omega=omega,
    )


# -- independent residual evaluation ----------------------------------------


def node_residuals(surface: PriceSurface) -> np.ndarray:
    """Per-node complementarity residual, recomputed from a fresh stencil.

    Interior rows use the scheme that produced the surface; the terminal slice
    and the fixed boundary report V - K; with epsilon == 0 the x = 0 entry is
    the defect against the exact ODE step.
    """
    params, grid = surface.params, surface.grid
    stencil = assemble_operator(params, grid, surface.epsilon)
    V = surface.values
    nt, nx = V.shape
    out = np.zeros((nt, nx))
    out[-1] = V[-1] - params.K
    out[:, -1] = V[:, -1] - params.K
    first = 1 if stencil.degenerate_origin else 0
    lo = params.gamma * grid.x
    scheme = surface.scheme if surface.scheme in SCHEMES else IMPLICIT_EULER

    for n, plan in _step_plan(scheme, nt).items():
        dtau_full = grid.t[n + 1] - grid.t[n]
        if len(plan) > 1 and n not in surface.substeps:
            plan = ((1.0, 1.0),)
        slices = [V[n + 1]]
        if len(plan) > 1:
            slices.append(surface.substeps[n])
        slices.append(V[n])
        worst = np.zeros(nx)
        for k, (fraction, theta) in enumerate(plan):
            old, new = slices[k], slices[k + 1]
            dtau = fraction * dtau_full
            a = theta * dtau
            # M V_new - b, b = V_old - (1 - theta) dt A V_old + dt c
            eq = new - old + a * stencil.apply(new) + (1.0 - theta) * dtau * stencil.apply(old) - dtau * params.c
            eq = eq / (1.0 + a * stencil.diag)
            r = np.maximum(np.minimum(eq, new - lo), new - params.K)
            if first:
                r[0] = new[0] - _ode_step(params, old[0], dtau)
            r[-1] = new[-1] - params.K
            worst = np.where(np.abs(r) > np.abs(worst), r, worst)
        out[n] = worst
    return out


def residual_report(surface: PriceSurface) -> list[ComplementarityResidual]:
    """Worst complementarity residual per time slice (index n = slice t_n)."""
    res = node_residuals(surface)
    report = []
    for n in range(res.shape[0]):
        i = int(np.argmax(np.abs(res[n])))
        report.append(ComplementarityResidual(float(abs(res[n, i])), (n, i)))
    return report


# -- regularised family -----------------------------------------------------


@dataclass(frozen=True)
class RegularizedFamily:
    epsilons: tuple[float, ...]
    surfaces: tuple[PriceSurface, ...]
    differences: tuple[float, ...]  # max-norm of consecutive surfaces on x >= margin
    neumann: tuple[float, ...]  # max_n |(W_1 - W_0) / h_0| per surface
    margin: float

    @property
    def differences_decreasing(self) -> bool:
        d = self.differences
        return all(b < a for a, b in zip(d, d[1:]))


def solve_regularized_family(
    params: ModelParams,
    grid: Grid,
    epsilons: Sequence[float],
    margin_fraction: float = 0.1,
    **solve_kwargs,
) -> RegularizedFamily:
    """Solve with diffusion x^2 + eps for a decreasing sequence of eps."""
    eps = tuple(float(e) for e in epsilons)
    if len(eps) < 2:
        raise ValueError("need at least two epsilons")
    if any(e < 0.0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing and >= 0")
    surfaces = tuple(solve(params, grid, epsilon=e, **solve_kwargs) for e in eps)
    margin = margin_fraction * params.x_max
    mask = grid.x >= margin
    diffs = tuple(
        float(np.abs(a.values[:, mask] - b.values[:, mask]).max()) for a, b in zip(surfaces, surfaces[1:])
    )
    h0 = grid.x[1] - grid.x[0]
    neumann = tuple(float(np.abs((s.values[:, 1] - s.values[:, 0]) / h0).max()) for s in surfaces)
    return RegularizedFamily(epsilons=eps, surfaces=surfaces, differences=diffs, neumann=neumann, margin=margin)


# -- behaviour at the degenerate boundary -----------------------------------


@dataclass(frozen=True)
class BoundaryRegularity:
    """max over t of |x^2 V_xx| and |x V_x| at the first three interior nodes."""

    x2_vxx: float
    x_vx: float
    nodes: tuple[float, ...]


def boundary_regularity_check(surface: PriceSurface, probe_nodes: int = 3) -> BoundaryRegularity:
    x = surface.grid.x
    L = surface.params.x_max
    if np.count_nonzero(x < 0.1 * L) < 5:
        raise InsufficientResolution("need at least 5 nodes in x < 0.1 K/gamma to probe x -> 0")
    (c_m, c_0, c_p), (s_m, s_0, s_p) = central_weights(x[: probe_nodes + 2])
    V = surface.values[:, : probe_nodes + 2]
    vx = c_m * V[:, :-2] + c_0 * V[:, 1:-1] + c_p * V[:, 2:]
    vxx = s_m * V[:, :-2] + s_0 * V[:, 1:-1] + s_p * V[:, 2:]
    xi = x[1 : probe_nodes + 1]
    return BoundaryRegularity(
        x2_vxx=float(np.abs(xi**2 * vxx).max()),
        x_vx=float(np.abs(xi * vx).max()),
        nodes=tuple(float(v) for v in xi),
    )


def boundary_regularity_shrinks(coarse: BoundaryRegularity, fine: BoundaryRegularity, ratio: float = 0.75) -> bool:
    """Both quantities must drop to at most ``ratio`` of the coarse value."""

    def shrinks(a: float, b: float) -> bool:
        return b == 0.0 or b <= ratio * a

    return shrinks(coarse.x2_vxx, fine.x2_vxx) and shrinks(coarse.x_vx, fine.x_vx)


# -- export -----------------------------------------------------------------


def write_surface_csv(surface: PriceSurface, path: str | Path) -> Path:
    """Rows ``t,x,V,obstacle_gap,residual``; t outer, x inner."""
    path = Path(path)
    res = node_residuals(surface)
    gap = surface.gap
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "x", "V", "obstacle_gap", "residual"])
        for n, t in enumerate(surface.grid.t):
            for i, x in enumerate(surface.grid.x):
                writer.writerow(
                    [repr(float(t)), repr(float(x)), repr(float(surface.values[n, i])), repr(float(gap[n, i])), repr(float(res[n, i]))]
                )
    return path
