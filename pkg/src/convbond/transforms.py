"""Reflected/time-reversed coordinates and parabolic rescaling.

With y = K/gamma - x and tau = T - t the bond value becomes
Vt(y, tau) = V(K/gamma - y, T - tau), and

    u = Vt + gamma y - K  >= 0

solves  Lt u = (c - q(K - gamma y)) chi{u > 0}  with u(0, tau) = 0 and
u(y, 0) = gamma y, where

    Lt = d/dtau - 1/2 sigma^2 (K/gamma - y)^2 d_yy + (r - q)(K/gamma - y) d_y + r.

Rescaling works in unit-square coordinates xi = y/(K/gamma), s = tau/T with
u normalised by K.  In those coordinates T*Lt keeps its form with sigma^2,
r, q replaced by sigma^2 T, rT, qT and K/gamma by 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .discretization import GEOMETRIC, GEOMETRIC_LEFT, UNIFORM, Grid, central_weights
from .errors import PatchOutOfDomain
from .lcp import IMPLICIT_EULER, PriceSurface
from .model import ModelParams

PATCH_NODES = 33
SUP = "sup"
S_SQUARED = "s_squared"

_MIRROR = {UNIFORM: UNIFORM, GEOMETRIC: GEOMETRIC_LEFT, GEOMETRIC_LEFT: GEOMETRIC}


@dataclass(frozen=True, eq=False)
class TransformedSurface:
    """u[n, i] at (tau_n, y_i); ``tilde`` holds the reflected bond values."""

    u: np.ndarray
    tilde: np.ndarray
    grid: Grid
    params: ModelParams
    source: PriceSurface | None = None

    @property
    def y(self) -> np.ndarray:
        return self.grid.x

    @property
    def tau(self) -> np.ndarray:
        return self.grid.t

    @property
    def xi(self) -> np.ndarray:
        return self.grid.x / self.params.x_max

    @property
    def s(self) -> np.ndarray:
        return self.grid.t / self.params.T

    @property
    def u_hat(self) -> np.ndarray:
        return self.u / self.params.K

    @classmethod
    def from_u(cls, u, grid: Grid, params: ModelParams) -> "TransformedSurface":
        """Wrap a synthetic u (no source surface), e.g. for negative controls."""
        u = np.asarray(u, dtype=float)
        tilde = u - params.gamma * grid.x + params.K
        return cls(u=u, tilde=tilde, grid=grid, params=params)


def _mirror_grid(grid: Grid) -> Grid:
    L, T = grid.x[-1], grid.t[-1]
    y = L - grid.x[::-1]
    tau = T - grid.t[::-1]
    y[0], tau[0] = 0.0, 0.0
    y[-1], tau[-1] = L, T
    return Grid(x=y, t=tau, spacing=_MIRROR[grid.spacing])


def to_transformed(surface: PriceSurface) -> TransformedSurface:
    """Index reversal in x and t plus the affine shift to u; no interpolation."""
    p = surface.params
    grid = _mirror_grid(surface.grid)
    tilde = surface.values[::-1, ::-1].copy()
    u = tilde + p.gamma * grid.x - p.K
    return TransformedSurface(u=u, tilde=tilde, grid=grid, params=p, source=surface)


def from_transformed(ts: TransformedSurface) -> PriceSurface:
    """Inverse of ``to_transformed`` (exact: it only reverses indices)."""
    if ts.source is not None:
        base = ts.source
        return PriceSurface(
            values=ts.tilde[::-1, ::-1].copy(),
            grid=base.grid,
            params=base.params,
            epsilon=base.epsilon,
            scheme=base.scheme,
            tol=base.tol,
            residuals=base.residuals,
            iterations=base.iterations,
            substeps=base.substeps,
            omega=base.omega,
        )
    return PriceSurface(values=ts.tilde[::-1, ::-1].copy(), grid=_mirror_grid(ts.grid), params=ts.params, scheme=IMPLICIT_EULER)


# -- the transformed operator --------------------------------------------------


def _coefficients(params: ModelParams, y: np.ndarray):
    """(diffusion, convection, reaction) of Lt at spatial points y."""
    dist = params.x_max - y
    return 0.5 * params.sigma**2 * dist**2, (params.r - params.q) * dist, params.r


def apply_spatial(params: ModelParams, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    """(-1/2 sigma^2 (L-y)^2 d_yy + (r-q)(L-y) d_y + r) u at interior nodes.

    Central three-point differences along the last axis; returns the interior
    columns only.
    """
    (c_m, c_0, c_p), (s_m, s_0, s_p) = central_weights(y)
    ux = c_m * u[..., :-2] + c_0 * u[..., 1:-1] + c_p * u[..., 2:]
    uxx = s_m * u[..., :-2] + s_0 * u[..., 1:-1] + s_p * u[..., 2:]
    a, b, r = _coefficients(params, y[1:-1])
    return -a * uxx + b * ux + r * u[..., 1:-1]


def source_term(params: ModelParams, y: np.ndarray) -> np.ndarray:
    """c - q(K - gamma y): right-hand side of Lt u on the positivity set."""
    return params.c - params.q * (params.K - params.gamma * y)


@dataclass(frozen=True)
class TransformedResidual:
    """Worst |Lt u - rhs chi{u > delta}| over the checked nodes.

    ``equation`` is taken over nodes whose stencil lies in the positivity
    set; ``exercise_min`` is min(Lt u - rhs) over nodes whose stencil lies in
    the contact set, where only Lt u >= rhs is required.
    """

    max_abs: float
    location: tuple[int, int]
    checked: int
    exercise_min: float


def transformed_residual(
    ts: TransformedSurface,
    tau_min_fraction: float = 0.1,
    delta: float | None = None,
    band: float = 0.0,
) -> TransformedResidual:
    """Apply Lt with second-order backward time differences and compare.

    Nodes are skipped when their stencil straddles the free boundary (the
    second derivative jumps there) or when tau < tau_min_fraction * T, where
    the corner (K/gamma, T) leaves a start-up layer.
    """
    p = ts.params
    u, y, tau = ts.u, ts.y, ts.tau
    if delta is None:
        delta = 1e-9 * p.K
    dtau = tau[1] - tau[0]
    nt, ny = u.shape
    n = np.arange(2, nt)
    du = (3.0 * u[2:] - 4.0 * u[1:-1] + u[:-2]) / (2.0 * dtau)
    Lu = du[:, 1:-1] + apply_spatial(p, y, u[2:])
    rhs = source_term(p, y[1:-1])

    pos = u > delta
    stencil_pos = pos[2:, 1:-1] & pos[2:, :-2] & pos[2:, 2:] & pos[1:-1, 1:-1] & pos[:-2, 1:-1]
    stencil_neg = ~(pos[2:, 1:-1] | pos[2:, :-2] | pos[2:, 2:] | pos[1:-1, 1:-1] | pos[:-2, 1:-1])
    late = (tau[n] >= tau_min_fraction * p.T)[:, None]
    if band > 0.0:
        contact = ~pos[2:]
        far = np.ones_like(stencil_pos)
        for row in range(contact.shape[0]):
            yc = y[contact[row]]
            if yc.size:
                dist = np.abs(y[1:-1, None] - yc[None, :]).min(axis=1)
                far[row] = dist > band
        late = late & far

    defect = np.where(stencil_pos, Lu - rhs, 0.0)
    defect = np.where(stencil_neg, Lu, defect)
    mask = late & (stencil_pos | stencil_neg)
    defect = np.where(mask, defect, 0.0)
    k = np.unravel_index(int(np.argmax(np.abs(defect))), defect.shape)
    ex = np.where(late & stencil_neg, Lu - rhs, np.inf)
    return TransformedResidual(
        max_abs=float(abs(defect[k])),
        location=(int(k[0] + 2), int(k[1] + 1)),
        checked=int(mask.sum()),
        exercise_min=float(ex.min()) if np.isfinite(ex.min()) else 0.0,
    )


# -- parabolic rescaling -------------------------------------------------------

UNIT = "unit"
RAW = "raw"


@dataclass(frozen=True)
class _Frame:
    """Coordinates, data and operator coefficients in one of the two frames."""

    space: np.ndarray
    time: np.ndarray
    u: np.ndarray
    diffusion: float  # multiplies (L - y)^2
    convection: float  # multiplies (L - y)
    reaction: float
    length: float


def _frame(ts: TransformedSurface, coordinates: str) -> _Frame:
    p = ts.params
    if coordinates == UNIT:
        # T * Lt acting on u/K in xi = y/L, s = tau/T
        return _Frame(ts.xi, ts.s, ts.u_hat, 0.5 * p.sigma**2 * p.T, (p.r - p.q) * p.T, p.r * p.T, 1.0)
    if coordinates == RAW:
        return _Frame(ts.y, ts.tau, ts.u, 0.5 * p.sigma**2, p.r - p.q, p.r, p.x_max)
    raise ValueError(f"coordinates must be {UNIT!r} or {RAW!r}")


@dataclass(frozen=True, eq=False)
class RescaledPatch:
    """v(Y, Theta) = u(s Y + y0, s^2 Theta + tau0) / A_s on [-1, 1]^2.

    In the ``unit`` frame (the default) y, tau and u are xi = y/(K/gamma),
    tau/T and u/K; in the ``raw`` frame they keep their units.
    """

    center: tuple[float, float]
    scale: float
    normalizer_kind: str
    normalizer: float
    Y: np.ndarray
    Theta: np.ndarray
    v: np.ndarray  # indexed [theta, Y]
    coordinates: str = UNIT


def _interpolator(time: np.ndarray, space: np.ndarray, values: np.ndarray):
    return RegularGridInterpolator((time, space), values, method="linear", bounds_error=True)


def rescale(
    ts: TransformedSurface,
    center: tuple[float, float],
    s: float,
    normalizer_kind: str = S_SQUARED,
    coordinates: str = UNIT,
) -> RescaledPatch:
    """Sample the parabolically rescaled u on a 33 x 33 lattice over Q_1.

    ``center`` = (y0, tau0) in the chosen frame.  Bilinear interpolation keeps
    the sampled values inside the data range and is exact on grid nodes.
    """
    if s <= 0.0:
        raise ValueError("scale must be > 0")
    if normalizer_kind not in (SUP, S_SQUARED):
        raise ValueError(f"normalizer_kind must be {SUP!r} or {S_SQUARED!r}")
    fr = _frame(ts, coordinates)
    y0, t0 = center
    L, T = fr.space[-1], fr.time[-1]
    eps = 1e-12 * max(L, T)
    if y0 - s < -eps or y0 + s > L + eps or t0 - s * s < -eps or t0 + s * s > T + eps:
        raise PatchOutOfDomain(f"Q_1 at centre {center} with scale {s} leaves the domain", center=list(center), scale=s)
    Y = np.linspace(-1.0, 1.0, PATCH_NODES)
    Theta = np.linspace(-1.0, 1.0, PATCH_NODES)
    ys = np.clip(s * Y + y0, 0.0, L)
    tt = np.clip(s * s * Theta + t0, 0.0, T)
    TT, YY = np.meshgrid(tt, ys, indexing="ij")
    raw = _interpolator(fr.time, fr.space, fr.u)(np.stack([TT, YY], axis=-1))
    if normalizer_kind == SUP:
        A = float(raw.max())
        if A <= 0.0:
            raise ValueError("sup normaliser needs u > 0 somewhere in the cylinder")
    else:
        A = s * s
    return RescaledPatch(
        center=(float(y0), float(t0)),
        scale=float(s),
        normalizer_kind=normalizer_kind,
        normalizer=A,
        Y=Y,
        Theta=Theta,
        v=raw / A,
        coordinates=coordinates,
    )


def scaled_operator(patch: RescaledPatch, params: ModelParams) -> np.ndarray:
    """Lt_{s,X0} v on the interior of the patch lattice (central differences).

    Lt_{s,X0} = d_Theta - a (L - (s Y + y0))^2 d_YY + s b (L - (s Y + y0)) d_Y + s^2 r.
    """
    if patch.coordinates == UNIT:
        a, b, r, L = 0.5 * params.sigma**2 * params.T, (params.r - params.q) * params.T, params.r * params.T, 1.0
    else:
        a, b, r, L = 0.5 * params.sigma**2, params.r - params.q, params.r, params.x_max
    s = patch.scale
    y0 = patch.center[0]
    v = patch.v
    dY = patch.Y[1] - patch.Y[0]
    dT = patch.Theta[1] - patch.Theta[0]
    vt = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2.0 * dT)
    vy = (v[1:-1, 2:] - v[1:-1, :-2]) / (2.0 * dY)
    vyy = (v[1:-1, 2:] - 2.0 * v[1:-1, 1:-1] + v[1:-1, :-2]) / dY**2
    dist = L - (s * patch.Y[1:-1] + y0)
    return vt - a * dist**2 * vyy + s * b * dist * vy + s * s * r * v[1:-1, 1:-1]


def frame_operator(ts: TransformedSurface, coordinates: str = UNIT) -> np.ndarray:
    """Lt applied to u at interior nodes (central in time and space).

    In the unit frame this is T * Lt acting on u/K.
    """
    fr = _frame(ts, coordinates)
    (c_m, c_0, c_p), (s_m, s_0, s_p) = central_weights(fr.space)
    inner = fr.u[1:-1]
    ux = c_m * inner[:, :-2] + c_0 * inner[:, 1:-1] + c_p * inner[:, 2:]
    uxx = s_m * inner[:, :-2] + s_0 * inner[:, 1:-1] + s_p * inner[:, 2:]
    dt = (fr.time[2:] - fr.time[:-2])[:, None]
    ut = (fr.u[2:, 1:-1] - fr.u[:-2, 1:-1]) / dt
    dist = fr.length - fr.space[1:-1]
    return ut - fr.diffusion * dist**2 * uxx + fr.convection * dist * ux + fr.reaction * inner[:, 1:-1]


def interpolated_operator(ts: TransformedSurface, patch: RescaledPatch) -> np.ndarray:
    """(s^2 / A_s) * interpolated (Lt u) at the patch's interior lattice."""
    fr = _frame(ts, patch.coordinates)
    interp = _interpolator(fr.time[1:-1], fr.space[1:-1], frame_operator(ts, patch.coordinates))
    s = patch.scale
    y0, t0 = patch.center
    ys = s * patch.Y[1:-1] + y0
    tt = s * s * patch.Theta[1:-1] + t0
    TT, YY = np.meshgrid(tt, ys, indexing="ij")
    return (s * s / patch.normalizer) * interp(np.stack([TT, YY], axis=-1))
