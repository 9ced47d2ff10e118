"""Free-boundary extraction and the quantitative estimates around it.

Conversion happens on a right interval [b(t), K/gamma] for t below the
touching time t*.  Measurements of the non-degeneracy, quadratic-growth and
doubling estimates run on the transformed function u (see ``transforms``)
in unit-square coordinates: xi = y / (K/gamma), s = tau / T, u / K.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyExerciseRegion, InsufficientResolution, InsufficientSamples
from .lcp import PriceSurface
from .model import ModelParams, exercise_lower_bound
from .transforms import TransformedSurface, to_transformed

KAPPA = 5.0


def detection_threshold(surface: PriceSurface, kappa: float = KAPPA) -> float:
    """Cash threshold below which V - gamma x counts as conversion.

    max(10 tol, kappa * M * h^2) with M the quadratic-detachment scale in x^2
    units, i.e. the curvature of u just off the exercise set, taken at
    x = K/gamma where it is largest.  Computed on the finest cell so the
    threshold stays below one cell's worth of detachment.
    """
    p = surface.params
    h = float(surface.grid.h.min())
    L = p.x_max
    curvature = (p.q * p.K - p.c) / (0.5 * p.sigma**2 * L**2)
    tol = surface.tol if surface.tol > 0.0 else 1e-10 * p.K
    return max(10.0 * tol, kappa * curvature * h**2 * (h / L) ** 2)


@dataclass(frozen=True, eq=False)
class FreeBoundaryCurve:
    """Detected boundary points (t_n, b_n) and the touching time.

    ``index`` holds the first exercise node per detected slice.
    """

    t: np.ndarray
    b: np.ndarray
    index: np.ndarray
    slices: np.ndarray
    t_star: float
    delta_fb: float
    params: ModelParams
    h_edge: float
    dt: float
    largest_jump: float
    contiguous: bool = True

    @property
    def d(self) -> np.ndarray:
        """Distance of each boundary point to the fixed boundary K/gamma."""
        return self.params.x_max - self.b

    def __len__(self) -> int:
        return self.b.size


def _refine(x: np.ndarray, gap: np.ndarray, i: int, delta: float) -> float:
    """Sub-cell boundary location left of exercise node i.

    Continuation values detach quadratically, so sqrt(V - gamma x) is close to
    linear; extrapolate it to zero from the two nodes left of i, and fall back
    to the node itself when that is not available or not consistent.
    """
    if i < 2:
        return float(x[i])
    g1, g2 = gap[i - 1], gap[i - 2]
    if g1 <= delta or g2 <= g1:
        return float(x[i])
    r1, r2 = math.sqrt(g1), math.sqrt(g2)
    root = x[i - 1] + r1 * (x[i - 1] - x[i - 2]) / (r2 - r1)
    return float(min(max(root, x[i - 1]), x[i]))


def _extrapolate_touch(t: np.ndarray, d: np.ndarray, h: float) -> float | None:
    """Zero of a straight-line fit to d(t) over the last resolved widths.

    Widths below 2h sit on the last cell and stall there for a while before
    the exercise set empties, so they are left out.  The fit window starts at
    [2h, 4h] and widens until it holds three points.
    """
    for upper in (4.0, 8.0, 16.0, 32.0):
        m = (d >= 2.0 * h) & (d <= upper * h)
        if np.count_nonzero(m) >= 3 and np.ptp(t[m]) > 0.0:
            slope, icpt = np.polyfit(t[m], d[m], 1)
            if slope < 0.0:
                return float(-icpt / slope)
    return None


def extract_free_boundary(surface: PriceSurface, delta: float | None = None) -> FreeBoundaryCurve:
    """Locate b(t_n) on every slice and estimate t*.

    Raises EmptyExerciseRegion when no slice has an exercise node off the
    fixed boundary.  t* comes from extrapolating the resolved part of the
    width d(t) to zero, clamped to [last non-empty slice, T].
    """
    p, grid = surface.params, surface.grid
    delta = detection_threshold(surface) if delta is None else float(delta)
    gap = surface.gap
    x = grid.x
    interior = gap[:, :-1] <= delta  # exclude the pinned node x = K/gamma

    ts, bs, idx, rows = [], [], [], []
    contiguous = True
    for n in range(grid.nt):
        hits = np.flatnonzero(interior[n])
        if hits.size == 0:
            continue
        i = int(hits[0])
        if hits.size != grid.nx - 1 - i:
            contiguous = False
        ts.append(grid.t[n])
        bs.append(_refine(x, gap[n], i, delta))
        idx.append(i)
        rows.append(n)
    if not rows:
        raise EmptyExerciseRegion(
            "no exercise node detected on any slice; conversion is never optimal on [0, T] for these parameters",
            delta_fb=delta,
        )

    t = np.array(ts)
    b = np.array(bs)
    last = rows[-1]
    h_edge = float(grid.h[-1])
    if last == grid.nt - 1:
        t_star = float(grid.t[-1])
    else:
        t_star = _extrapolate_touch(t, p.x_max - b, h_edge)
        if t_star is None:
            t_star = float(grid.t[last + 1])
        t_star = float(min(max(t_star, grid.t[last]), grid.t[-1]))

    jumps = np.abs(np.diff(b))
    return FreeBoundaryCurve(
        t=t,
        b=b,
        index=np.array(idx, dtype=int),
        slices=np.array(rows, dtype=int),
        t_star=t_star,
        delta_fb=delta,
        params=p,
        h_edge=h_edge,
        dt=grid.dt,
        largest_jump=float(jumps.max()) if jumps.size else 0.0,
        contiguous=contiguous,
    )


def lower_bound_margin(curve: FreeBoundaryCurve) -> float:
    """min_n b_n - c/(q gamma); the estimate requires this to be >= -h."""
    return float(curve.b.min() - exercise_lower_bound(curve.params))


def slice_stability(curve: FreeBoundaryCurve, other: FreeBoundaryCurve) -> float:
    """Largest shift of b_n between two detections on the same grid, in cells."""
    common, ia, ib = np.intersect1d(curve.slices, other.slices, return_indices=True)
    if common.size == 0:
        return math.inf
    missing = max(curve.slices.size, other.slices.size) - common.size
    shift = float(np.abs(curve.b[ia] - other.b[ib]).max()) / curve.h_edge
    return math.inf if missing else shift


def write_free_boundary_csv(curve: FreeBoundaryCurve, path) -> Path:
    """CSV with header ``t,b,delta_fb``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "b", "delta_fb"])
        for t, b in zip(curve.t, curve.b):
            w.writerow([repr(float(t)), repr(float(b)), repr(curve.delta_fb)])
    return path


# -- cylinder sups in unit-square coordinates ---------------------------------


def _unit_arrays(ts: TransformedSurface):
    return ts.xi, ts.s, ts.u_hat


def _cylinder_sup(ts: TransformedSurface, xi0: float, s0: float, rho: float, lower: bool = False) -> float:
    """sup of u/K over {|xi - xi0| <= rho} x [s0 - rho^2, s0 (+ rho^2)], clipped to the domain.

    ``lower`` keeps only the half with s <= s0 (earlier tau, i.e. later t).
    """
    xi, s, u = _unit_arrays(ts)
    slack = 1e-12
    xm = np.abs(xi - xi0) <= rho + slack
    hi = s0 + slack if lower else s0 + rho * rho + slack
    sm = (s >= s0 - rho * rho - slack) & (s <= hi)
    if not xm.any() or not sm.any():
        return 0.0
    return float(u[np.ix_(sm, xm)].max())


def _dyadic_radii(h: float, rho_max: float) -> list[float]:
    radii, rho = [], 0.5
    while rho >= 4.0 * h - 1e-15:
        if rho <= rho_max + 1e-15:
            radii.append(rho)
        rho *= 0.5
    return radii


def _curve_for(ts: TransformedSurface, curve: FreeBoundaryCurve | None) -> FreeBoundaryCurve:
    if curve is not None:
        return curve
    if ts.source is None:
        raise ValueError("pass the free-boundary curve for a transformed surface without a source")
    return extract_free_boundary(ts.source)


def touching_point(ts: TransformedSurface, curve: FreeBoundaryCurve) -> tuple[float, float]:
    """(K/gamma, t*) in unit-square transformed coordinates: (0, (T - t*)/T)."""
    return 0.0, (ts.params.T - curve.t_star) / ts.params.T


def boundary_samples(ts: TransformedSurface, curve: FreeBoundaryCurve, count: int) -> list[tuple[float, float]]:
    """Up to ``count`` points of Gamma, evenly spread over the detected slices.

    Each point is the last exercise node of its slice mapped to (xi, s); it
    lies within one cell of Gamma.
    """
    L, T = ts.params.x_max, ts.params.T
    grid_x = ts.source.grid.x if ts.source is not None else L - ts.y[::-1]
    picks = np.unique(np.linspace(0, len(curve) - 1, max(count, 1)).round().astype(int))
    return [((L - grid_x[curve.index[k]]) / L, (T - curve.t[k]) / T) for k in picks]


# -- non-degeneracy -------------------------------------------------------------


@dataclass(frozen=True)
class NonDegeneracyResult:
    """min over samples and radii of (sup_{Q-_rho} u - u(X0)) / rho^2, with u/K on the unit square."""

    c0: float
    table: tuple[tuple[float, float, float, float], ...]  # (xi0, s0, rho, ratio)
    skipped: int
    h: float


def non_degeneracy_check(
    ts: TransformedSurface,
    sample_count: int = 8,
    curve: FreeBoundaryCurve | None = None,
    rho_max: float = 0.25,
) -> NonDegeneracyResult:
    """Measure the quadratic lower bound on lower-half cylinders at points of Gamma.

    Cylinders that reach below s = 0 are invalid; those whose sup stays under
    10 delta_fb are skipped as unresolved.  Raises InsufficientSamples when
    fewer than ``sample_count`` samples contribute a valid cylinder.
    """
    curve = _curve_for(ts, curve)
    h = float(np.diff(ts.xi).max())
    floor = 10.0 * curve.delta_fb / ts.params.K
    xi, s, u = _unit_arrays(ts)
    rows, skipped, used = [], 0, 0
    for xi0, s0 in boundary_samples(ts, curve, sample_count):
        j = int(np.argmin(np.abs(xi - xi0)))
        n = int(np.argmin(np.abs(s - s0)))
        u0 = float(u[n, j])
        contributed = False
        for rho in _dyadic_radii(h, rho_max):
            if s0 - rho * rho < -1e-12:
                continue
            top = _cylinder_sup(ts, xi0, s0, rho, lower=True)
            if top < floor:
                skipped += 1
                continue
            rows.append((xi0, s0, rho, (top - u0) / rho**2))
            contributed = True
        used += contributed
    if used < sample_count:
        raise InsufficientSamples(f"only {used} of {sample_count} samples have a valid cylinder", used=used)
    return NonDegeneracyResult(c0=min(r[3] for r in rows), table=tuple(rows), skipped=skipped, h=h)


def non_degeneracy_stable(coarse: NonDegeneracyResult, fine: NonDegeneracyResult, ratio: float = 0.5) -> bool:
    """c0 > 0 on both levels and bounded away from zero under refinement."""
    if coarse.c0 <= 0.0 or fine.c0 <= 0.0:
        return False
    q = fine.c0 / coarse.c0
    return ratio <= q <= 1.0 / ratio


# -- quadratic growth -----------------------------------------------------------


@dataclass(frozen=True)
class GrowthResult:
    """max over samples and radii of sup_{Q'_rho} u / rho^2, with u/K on the unit square."""

    C0: float
    table: tuple[tuple[float, float, float, float], ...]  # (xi0, s0, rho, ratio)
    h: float


def quadratic_growth_check(
    ts: TransformedSurface,
    curve: FreeBoundaryCurve | None = None,
    sample_count: int = 8,
    points: Sequence[tuple[float, float]] | None = None,
    rho_max: float = 0.25,
) -> GrowthResult:
    """Measure the quadratic upper bound on full cylinders.

    Samples are points of Gamma plus the touching point, unless ``points``
    (unit-square (xi, s) pairs) are given explicitly.
    """
    if points is None:
        curve = _curve_for(ts, curve)
        points = boundary_samples(ts, curve, sample_count) + [touching_point(ts, curve)]
    h = float(np.diff(ts.xi).max())
    rows = []
    for xi0, s0 in points:
        for rho in _dyadic_radii(h, rho_max):
            rows.append((float(xi0), float(s0), rho, _cylinder_sup(ts, xi0, s0, rho) / rho**2))
    if not rows:
        raise InsufficientResolution("no dyadic radius in [4h, rho_max]", h=h)
    return GrowthResult(C0=max(r[3] for r in rows), table=tuple(rows), h=h)


def growth_stable(results: Sequence[GrowthResult], factor: float = 2.0) -> bool:
    """Measured C0 within ``factor`` across refinement levels."""
    vals = [r.C0 for r in results]
    if min(vals) <= 0.0:
        return False
    return max(vals) / min(vals) < factor


# -- dyadic doubling ------------------------------------------------------------


@dataclass(frozen=True)
class DoublingResult:
    """S_j = sup_{Q'_{2^-j}} u for j = 1..J and the inequality verdict per row.

    Row j (1-based, j < J) tests
    S_{j+1} <= max(4^-j C1, 4^-1 S_j, 4^-2 S_{j-1}, ..., 4^-j S_1).
    """

    S: tuple[float, ...]
    C1: float
    holds: tuple[bool, ...]
    passed: bool


def doubling_verdict(S: Sequence[float], margin: float = 2.0) -> DoublingResult:
    """Evaluate the doubling inequality for a table S_1, S_2, ...

    C1 is calibrated as ``margin`` times the largest 4^j S_{j+1} over the
    first half of the rows and then held fixed, so the inequality is a
    genuine prediction for the finer rows rather than true by construction.
    """
    S = [float(v) for v in S]
    rows = len(S) - 1
    if rows < 2:
        raise InsufficientResolution("need at least three dyadic levels", levels=len(S))
    calib = max(1, math.ceil(rows / 2))
    C1 = margin * max(4.0**j * S[j] for j in range(1, calib + 1))
    holds = []
    for j in range(1, rows + 1):
        # S[j] is S_{j+1}; S[i - 1] is S_i
        rhs = max([4.0**-j * C1] + [4.0 ** -(j + 1 - i) * S[i - 1] for i in range(1, j + 1)])
        holds.append(S[j] <= rhs * (1.0 + 1e-12))
    return DoublingResult(S=tuple(S), C1=C1, holds=tuple(holds), passed=all(holds))


def doubling_table(ts: TransformedSurface, point: tuple[float, float]) -> list[float]:
    """S_j at ``point`` for j >= 1 while 2^-j >= 4h."""
    h = float(np.diff(ts.xi).max())
    return [_cylinder_sup(ts, point[0], point[1], rho) for rho in _dyadic_radii(h, 0.5)]


def doubling_check(ts: TransformedSurface, curve: FreeBoundaryCurve | None = None) -> DoublingResult:
    """Doubling inequality at the touching point."""
    curve = _curve_for(ts, curve)
    return doubling_verdict(doubling_table(ts, touching_point(ts, curve)))


# -- tangency -------------------------------------------------------------------

TANGENCY_REACH = 0.2
MIN_TANGENCY_POINTS = 8
# a "decrease" must beat this relative margin; interpolating t(d) between
# boundary points biases m_k by far less, while a tangential boundary
# roughly halves m_k per dyadic step
DECREASE_MARGIN = 0.02


@dataclass(frozen=True)
class TangencyReport:
    """m_k = d_k^2 / (t* - t(d_k)) at d_k = 0.2 (K/gamma) 2^-k.

    ``samples`` keeps every k whose d_k lies on the curve; ``resolvable``
    flags those with d_k >= 2h and t* - t(d_k) >= dt.
    """

    samples: tuple[tuple[float, float], ...]
    resolvable: tuple[bool, ...]
    decreasing: bool
    smallest: float
    shrink_ratio: float | None
    fitted_modulus: tuple[float, ...]
    verdict: bool


def _time_at_width(t: np.ndarray, d: np.ndarray, dk: float) -> float | None:
    hits = np.flatnonzero(d >= dk)
    if hits.size == 0:
        return None
    i = int(hits[-1])
    if i + 1 < d.size and d[i + 1] < d[i]:
        return float(t[i] + (d[i] - dk) / (d[i] - d[i + 1]) * (t[i + 1] - t[i]))
    return float(t[i])


def tangency_check(
    curve: FreeBoundaryCurve,
    params: ModelParams | None = None,
    reference: TangencyReport | None = None,
    shrink: float = 0.8,
) -> TangencyReport:
    """Check that the boundary approaches (K/gamma, t*) flatter than any parabola.

    Passes when the last three resolvable m_k strictly decrease and, given a
    coarser-grid ``reference``, the smallest resolvable m_k has shrunk to at
    most ``shrink`` times the reference value.
    """
    params = curve.params if params is None else params
    L = params.x_max
    d, t = curve.d, curve.t
    near = np.count_nonzero(d <= TANGENCY_REACH * L)
    if near < MIN_TANGENCY_POINTS:
        raise InsufficientResolution(
            f"{near} boundary points within {TANGENCY_REACH} K/gamma of the touching point, need {MIN_TANGENCY_POINTS}",
            points=int(near),
        )
    samples, resolvable = [], []
    k = 0
    while True:
        dk = TANGENCY_REACH * L * 2.0**-k
        k += 1
        if dk < curve.h_edge:
            break
        tk = _time_at_width(t, d, dk)
        if tk is None:
            continue
        wait = curve.t_star - tk
        if wait <= 0.0:
            continue
        samples.append((dk, dk * dk / wait))
        resolvable.append(dk >= 2.0 * curve.h_edge and wait >= curve.dt)
    m = [mk for (dk, mk), ok in zip(samples, resolvable) if ok]
    if len(m) < 3:
        raise InsufficientResolution(f"{len(m)} resolvable dyadic distances, need 3", resolvable=len(m))
    tail = m[-3:]
    decreasing = all(b < a * (1.0 - DECREASE_MARGIN) for a, b in zip(tail, tail[1:]))
    smallest = min(m)
    ratio = None if reference is None else smallest / reference.smallest
    envelope = np.maximum.accumulate(np.array([mk for _, mk in samples])[::-1])[::-1]
    verdict = decreasing and (ratio is None or ratio <= shrink)
    return TangencyReport(
        samples=tuple(samples),
        resolvable=tuple(resolvable),
        decreasing=decreasing,
        smallest=smallest,
        shrink_ratio=ratio,
        fitted_modulus=tuple(float(v) for v in envelope),
        verdict=verdict,
    )


def synthetic_curve(t: np.ndarray, b: np.ndarray, t_star: float, params: ModelParams, h_edge: float, dt: float) -> FreeBoundaryCurve:
    """Hand-made boundary data, e.g. for negative controls of the tangency test."""
    t = np.asarray(t, dtype=float)
    b = np.asarray(b, dtype=float)
    return FreeBoundaryCurve(
        t=t,
        b=b,
        index=np.zeros(b.size, dtype=int),
        slices=np.arange(b.size),
        t_star=float(t_star),
        delta_fb=0.0,
        params=params,
        h_edge=float(h_edge),
        dt=float(dt),
        largest_jump=float(np.abs(np.diff(b)).max()) if b.size > 1 else 0.0,
    )


# -- touching-time gap ----------------------------------------------------------


@dataclass(frozen=True)
class TStarGap:
    """Measurement only: T - t*, and the 1/2-Hoelder quotient of V_x at x = K/gamma.

    V_x is the one-sided difference over the last cell; ``vx_at_touch`` is
    read on the last slice with a detected exercise node.
    """

    gap: float
    holder_quotient: float
    vx_at_maturity: float
    vx_at_touch: float


def t_star_gap_report(curve: FreeBoundaryCurve, surface: PriceSurface) -> TStarGap:
    x, t, V = surface.grid.x, surface.grid.t, surface.values
    vx = (V[:, -1] - V[:, -2]) / (x[-1] - x[-2])
    dv = np.abs(vx[:, None] - vx[None, :])
    dtt = np.sqrt(np.abs(t[:, None] - t[None, :]))
    off = dtt > 0.0
    quotient = float((dv[off] / dtt[off]).max())
    # last slice that still has conversion next to K/gamma
    n = int(curve.slices[-1]) if len(curve) else t.size - 1
    return TStarGap(
        gap=float(surface.params.T - curve.t_star),
        holder_quotient=quotient,
        vx_at_maturity=float(vx[-1]),
        vx_at_touch=float(vx[n]),
    )
