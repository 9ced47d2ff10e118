"""Acceptance criteria 1-10, each at its stated tolerance.

Every criterion prints one ``PASS``/``FAIL`` line (also collected into the
pytest terminal summary).  Criteria 5-7 are stated at the reference
parameters, where conversion is never optimal before maturity; they run
literally there and fail with EmptyExerciseRegion.  The same measurements at
a configuration whose exercise region does touch K/gamma are reported on
separate ``supplementary`` lines.

Run directly with ``python tests/test_acceptance.py`` for the lines alone.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from convbond.discretization import build_grid
from convbond.errors import ConvBondError
from convbond.free_boundary import (
    doubling_check,
    extract_free_boundary,
    growth_stable,
    lower_bound_margin,
    non_degeneracy_check,
    non_degeneracy_stable,
    quadratic_growth_check,
    synthetic_curve,
    tangency_check,
)
from convbond.lcp import solve, solve_regularized_family
from convbond.model import ModelParams, boundary_value_x0, exercise_lower_bound
from convbond.oracle import tree_price_at
from convbond.transforms import from_transformed, to_transformed, transformed_residual

from conftest import ACCEPTANCE_LINES, DEFAULT, TOUCHING, random_admissible

SEED = 20261016
RANDOM_SETS = 20
TIGHT = 1e-12  # solver tolerance for the monotonicity suite, relative to K


def record(label: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def check(label: str, fn) -> None:
    """Run ``fn`` -> (ok, detail); errors are reported as FAIL with their code."""
    try:
        ok, detail = fn()
    except ConvBondError as exc:
        record(label, False, f"[{exc.code}] {exc}")
        raise
    record(label, ok, detail)
    assert ok, detail


def default_params() -> ModelParams:
    return ModelParams(**DEFAULT)


def touching_params() -> ModelParams:
    return ModelParams(**TOUCHING)


def random_sets() -> list[ModelParams]:
    rng = np.random.default_rng(SEED)
    return [random_admissible(rng) for _ in range(RANDOM_SETS)]


_solves: dict = {}


def solved(params: ModelParams, n: int, tol: float | None = None):
    key = (tuple(params.as_dict().values()), n, tol)
    if key not in _solves:
        _solves[key] = solve(params, build_grid(params, n, n), tol=tol)
    return _solves[key]


# -- 1 ------------------------------------------------------------------------


def criterion_1():
    p = default_params()
    start = time.perf_counter()
    s = solve(p, build_grid(p, 200, 200))
    elapsed = time.perf_counter() - start
    err = float(np.abs(s.values[:, 0] - boundary_value_x0(p, s.t)).max())
    ok = err <= 1e-8 * p.K and elapsed < 5.0
    return ok, f"max |V(0,t) - closed form| = {err:.2e} (<= {1e-8 * p.K:.0e}), runtime {elapsed:.2f} s (< 5 s)"


# -- 2 ------------------------------------------------------------------------


def criterion_2():
    worst_lo = worst_hi = 0.0
    strict = True
    for p in (default_params(), touching_params()):
        s = solved(p, 200)
        worst_lo = min(worst_lo, float(s.gap.min()) / p.K)
        worst_hi = max(worst_hi, float((s.values - p.K).max()) / p.K)
        strict &= bool(np.all(s.values[:-1, :-1] < p.K))
    ok = worst_lo >= -1e-10 and worst_hi <= 1e-10 and strict
    return ok, f"min (V - gamma x)/K = {worst_lo:.1e}, max (V - K)/K = {worst_hi:.1e}, V < K inside: {strict}"


# -- 3 and 4 -------------------------------------------------------------------


def criterion_3():
    worst_t = worst_lo = worst_hi = 0.0
    ok = True
    for p in random_sets():
        s = solved(p, 200, TIGHT * p.K)
        V = s.values
        dv_t = np.diff(V, axis=0).min()  # V_t dt, compared with -1e-8 K
        vx = np.diff(V, axis=1) / np.diff(s.x)
        ok &= dv_t >= -1e-8 * p.K and vx.min() >= -1e-8 and vx.max() <= p.gamma + 1e-8
        worst_t = min(worst_t, dv_t / p.K)
        worst_lo = min(worst_lo, vx.min())
        worst_hi = max(worst_hi, vx.max() - p.gamma)
    return bool(ok), (
        f"{RANDOM_SETS} sets: min V_t dt/K = {worst_t:.1e}, min V_x = {worst_lo:.1e}, "
        f"max V_x - gamma = {worst_hi:.1e} (slack 1e-8)"
    )


def criterion_4():
    ok = True
    detected = 0
    worst = np.inf
    for p in random_sets():
        s = solved(p, 200, TIGHT * p.K)
        try:
            curve = extract_free_boundary(s)
        except ConvBondError:
            continue  # no detected points, nothing to bound
        detected += 1
        margin = lower_bound_margin(curve)
        worst = min(worst, margin / s.grid.h_max)
        ok &= margin >= -s.grid.h_max
    curve = extract_free_boundary(solved(touching_params(), 201))
    margin = lower_bound_margin(curve)
    ok &= margin >= -curve.h_edge
    return bool(ok) and detected > 0, (
        f"{detected} of {RANDOM_SETS} sets have an exercise region; min (b - c/(q gamma))/h = {worst:.1f} (>= -1); "
        f"touching configuration margin {margin:.2f}"
    )


# -- 5 ------------------------------------------------------------------------


def t_star_measurement(p: ModelParams, sizes):
    curves = [extract_free_boundary(solved(p, n)) for n in sizes]
    dts = [solved(p, n).grid.dt for n in sizes]
    gap_ok = p.T - curves[0].t_star > 2 * dts[0]
    drifts = [abs(b.t_star - a.t_star) for a, b in zip(curves, curves[1:])]
    ok = gap_ok and all(d <= 4 * dt for d, dt in zip(drifts, dts[1:]))
    ts = ", ".join(f"{c.t_star:.4f}" for c in curves)
    dr = ", ".join(f"{d:.4f} (<= {4 * dt:.4f})" for d, dt in zip(drifts, dts[1:]))
    return ok, f"t* = [{ts}], T - t* = {p.T - curves[0].t_star:.3f}, drift {dr}"


def criterion_5():
    return t_star_measurement(default_params(), (201, 401, 801))


def criterion_5_supplementary():
    return t_star_measurement(touching_params(), (201, 401, 801))


# -- 6 ------------------------------------------------------------------------


def american_put_control_fails(p: ModelParams) -> bool:
    d = np.linspace(1e-3, 0.15 * p.x_max, 3000)[::-1]
    t_star = 0.7 * p.T
    curve = synthetic_curve(t_star - 0.01 * d**2, p.x_max - d, t_star, p, h_edge=p.x_max / 800, dt=p.T / 800)
    coarse = synthetic_curve(t_star - 0.01 * d**2, p.x_max - d, t_star, p, h_edge=p.x_max / 400, dt=p.T / 400)
    return not tangency_check(curve, reference=tangency_check(coarse)).verdict


def tangency_measurement(p: ModelParams, sizes):
    coarse = tangency_check(extract_free_boundary(solved(p, sizes[0])))
    fine = tangency_check(extract_free_boundary(solved(p, sizes[1])), reference=coarse)
    control = american_put_control_fails(p)
    shrink = 1.0 - fine.shrink_ratio
    ok = coarse.decreasing and fine.decreasing and shrink >= 0.2 and control
    m = ", ".join(f"{mk:.3g}" for (_, mk), r in zip(fine.samples, fine.resolvable) if r)
    return ok, (
        f"m_k (fine) = [{m}], last three decreasing: {coarse.decreasing}/{fine.decreasing}, "
        f"smallest m_k shrinks {100 * shrink:.0f}% (>= 20%), parabola control fails: {control}"
    )


def criterion_6():
    return tangency_measurement(default_params(), (401, 801))


def criterion_6_supplementary():
    return tangency_measurement(touching_params(), (401, 801))


# -- 7 ------------------------------------------------------------------------


def estimates_measurement(p: ModelParams, sizes):
    curves = [extract_free_boundary(solved(p, n)) for n in sizes]
    tss = [to_transformed(solved(p, n)) for n in sizes]
    nd = [non_degeneracy_check(ts, curve=c) for ts, c in zip(tss, curves)]
    gr = [quadratic_growth_check(ts, curve=c) for ts, c in zip(tss, curves)]
    db = doubling_check(tss[-1], curve=curves[-1])
    c0 = [r.c0 for r in nd]
    C0 = [r.C0 for r in gr]
    nd_ok = all(v > 0 for v in c0) and all(non_degeneracy_stable(a, b) for a, b in zip(nd, nd[1:]))
    ok = nd_ok and growth_stable(gr) and db.passed
    return ok, (
        f"c0 = {[round(v, 3) for v in c0]}, C0 = {[round(v, 3) for v in C0]}, "
        f"doubling holds at {sum(db.holds)}/{len(db.holds)} rows (C1 = {db.C1:.3g})"
    )


def criterion_7():
    return estimates_measurement(default_params(), (201, 401, 801))


def criterion_7_supplementary():
    return estimates_measurement(touching_params(), (201, 401, 801))


# -- 8 ------------------------------------------------------------------------


def criterion_8():
    p = default_params()
    start = time.perf_counter()
    s = solve(p, build_grid(p, 400, 400))
    lo, hi = exercise_lower_bound(p), 0.95 * p.x_max
    spots = lo + (hi - lo) * np.arange(1, 6) / 5
    diffs = [abs(s.at(x, 0.0) - tree_price_at(p, float(x), 2000)) for x in spots]
    elapsed = time.perf_counter() - start
    worst = max(diffs)
    ok = worst <= 0.0025 * p.K and elapsed < 60.0
    return ok, f"max |PDE - tree| = {worst:.4f} (<= {0.0025 * p.K}) at spots {np.round(spots, 2).tolist()}, runtime {elapsed:.2f} s (< 60 s)"


# -- 9 ------------------------------------------------------------------------


def criterion_9():
    p = default_params()
    ok = True
    for q in (p, touching_params()):
        s = solved(q, 201)
        ts = to_transformed(s)
        ok &= bool(np.abs(ts.u[:, 0]).max() <= 1e-8 * q.K)
        ok &= bool(np.abs(ts.u[0] - q.gamma * ts.y).max() <= 1e-8 * q.K)
        ok &= bool(np.array_equal(from_transformed(ts).values, s.values))
    errs = [transformed_residual(to_transformed(solved(p, n))).max_abs for n in (101, 201, 401)]
    orders = [float(np.log2(a / b)) for a, b in zip(errs, errs[1:])]
    ok &= all(o >= 1.0 for o in orders)
    return ok, f"u(0,tau)=0, u(y,0)=gamma y, exact round trip; residual {[f'{e:.2e}' for e in errs]}, orders {[round(o, 2) for o in orders]} (>= 1)"


# -- 10 -----------------------------------------------------------------------


def criterion_10():
    p = default_params()
    g = build_grid(p, 200, 200)
    fam = solve_regularized_family(p, g, [1e-1, 1e-2, 1e-3])
    h = float(g.x[1])
    ok = fam.differences_decreasing and max(fam.neumann) <= 10 * h
    return ok, (
        f"differences on x >= 0.1 K/gamma {[f'{d:.2e}' for d in fam.differences]}, "
        f"max |d_x W(0,t)| = {max(fam.neumann):.2e} (<= 10 h = {10 * h:.2f})"
    )


CRITERIA = [
    ("criterion 1 (x=0 closed form)", criterion_1),
    ("criterion 2 (obstacle bounds)", criterion_2),
    ("criterion 3 (monotonicity suite)", criterion_3),
    ("criterion 4 (free-boundary lower bound)", criterion_4),
    ("criterion 5 (touching time, reference parameters)", criterion_5),
    ("criterion 5 supplementary (touching configuration)", criterion_5_supplementary),
    ("criterion 6 (tangency, reference parameters)", criterion_6),
    ("criterion 6 supplementary (touching configuration)", criterion_6_supplementary),
    ("criterion 7 (non-degeneracy and growth, reference parameters)", criterion_7),
    ("criterion 7 supplementary (touching configuration)", criterion_7_supplementary),
    ("criterion 8 (oracle agreement)", criterion_8),
    ("criterion 9 (transform identities)", criterion_9),
    ("criterion 10 (epsilon family)", criterion_10),
]


@pytest.mark.parametrize("label, fn", CRITERIA, ids=[f.__name__ for _, f in CRITERIA])
def test_criterion(label, fn):
    check(label, fn)


if __name__ == "__main__":
    for label, fn in CRITERIA:
        try:
            check(label, fn)
        except (AssertionError, ConvBondError):
            pass
