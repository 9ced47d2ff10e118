import numpy as np
import pytest

from convbond.errors import PatchOutOfDomain
from convbond.free_boundary import extract_free_boundary
from convbond.transforms import (
    PATCH_NODES,
    S_SQUARED,
    SUP,
    TransformedSurface,
    from_transformed,
    interpolated_operator,
    rescale,
    scaled_operator,
    to_transformed,
    transformed_residual,
)

from conftest import cached_solve


def test_boundary_and_initial_values(default_surface, touching_surfaces):
    for s in (default_surface, touching_surfaces[0]):
        ts = to_transformed(s)
        assert np.abs(ts.u[:, 0]).max() <= 1e-12 * s.params.K
        assert np.allclose(ts.u[0], s.params.gamma * ts.y, rtol=0, atol=1e-12 * s.params.K)
        assert ts.y[0] == 0.0 and ts.y[-1] == s.params.x_max
        assert ts.tau[0] == 0.0 and ts.tau[-1] == s.params.T


def test_round_trip_is_exact(default_surface, touching_surfaces):
    for s in (default_surface, touching_surfaces[1]):
        back = from_transformed(to_transformed(s))
        assert np.array_equal(back.values, s.values)
        assert back.grid is s.grid


def test_round_trip_without_source(default_surface):
    ts = to_transformed(default_surface)
    bare = TransformedSurface(u=ts.u, tilde=ts.tilde, grid=ts.grid, params=ts.params)
    again = to_transformed(from_transformed(bare))
    assert np.array_equal(again.tilde, ts.tilde)


def test_transformed_monotonicity(touching_params):
    # tight solver tolerance: the 1e-8 slack is absolute in u_y, finer than 1e-10 K / h
    ts = to_transformed(cached_solve(touching_params, 201, tol=1e-12 * touching_params.K))
    uy = np.diff(ts.u, axis=1) / np.diff(ts.y)
    g = ts.params.gamma
    assert uy.min() >= -1e-8 and uy.max() <= g + 1e-8


def test_indicator_maps_index_for_index(touching_surfaces):
    s = touching_surfaces[0]
    ts = to_transformed(s)
    delta = 10 * s.tol
    assert np.array_equal((ts.u > delta)[::-1, ::-1], s.gap > delta)


def test_touching_point_image(touching_surfaces):
    s = touching_surfaces[0]
    ts = to_transformed(s)
    curve = extract_free_boundary(s)
    delta = curve.delta_fb
    # last transformed time with contact off y = 0 should sit at T - t* within a cell
    contact = (ts.u[:, 1:] <= delta).any(axis=1)
    first_touch = ts.tau[np.flatnonzero(contact)[0]]
    assert abs(first_touch - (s.params.T - curve.t_star)) <= 2 * s.grid.dt + (curve.t_star - curve.t[-1])


def test_residual_order_smooth(default_params):
    res = [transformed_residual(to_transformed(cached_solve(default_params, n, tol=1e-12 * default_params.K))) for n in (101, 201, 401)]
    errs = [r.max_abs for r in res]
    assert all(np.log2(a / b) >= 1.0 for a, b in zip(errs, errs[1:]))
    assert all(r.checked > 0 for r in res)


def test_residual_order_away_from_boundary(touching_params):
    band = 0.05 * touching_params.x_max
    res = [
        transformed_residual(to_transformed(cached_solve(touching_params, n, tol=1e-12 * touching_params.K)), band=band)
        for n in (101, 201, 401)
    ]
    errs = [r.max_abs for r in res]
    assert all(np.log2(a / b) >= 1.0 for a, b in zip(errs, errs[1:]))
    # on the contact set only the inequality L u >= rhs is required
    assert all(r.exercise_min >= 0.0 for r in res)


def test_rescale_shapes_and_normalizers(default_surface):
    ts = to_transformed(default_surface)
    p1 = rescale(ts, (0.5, 0.5), 0.25, SUP)
    assert p1.v.shape == (PATCH_NODES, PATCH_NODES)
    assert p1.v.max() == pytest.approx(1.0)
    p2 = rescale(ts, (0.5, 0.5), 0.25, S_SQUARED)
    assert p2.normalizer == 0.0625
    assert np.allclose(p2.v * p2.normalizer, p1.v * p1.normalizer)


def test_rescale_outside_domain(default_surface):
    ts = to_transformed(default_surface)
    with pytest.raises(PatchOutOfDomain):
        rescale(ts, (0.1, 0.5), 0.25)
    with pytest.raises(PatchOutOfDomain):
        rescale(ts, (0.5, 0.02), 0.25)
    with pytest.raises(ValueError):
        rescale(ts, (0.5, 0.5), 0.25, "max")


def test_rescale_bilinear_stays_in_range(touching_surfaces):
    ts = to_transformed(touching_surfaces[0])
    patch = rescale(ts, (0.1, 0.35), 0.08, S_SQUARED)
    raw = patch.v * patch.normalizer
    assert raw.min() >= ts.u_hat.min() and raw.max() <= ts.u_hat.max()


def test_scaling_identity_exact_on_polynomials(default_params):
    """On lattice-aligned patches and quadratic data both sides are exact differences."""
    mirror = to_transformed(cached_solve(default_params, 257)).grid
    xi = mirror.x / mirror.x[-1]
    s_ = mirror.t / mirror.t[-1]
    S, X = np.meshgrid(s_, xi, indexing="ij")
    u_hat = 0.3 + 0.7 * X + 1.9 * X**2 - 0.4 * S + 0.8 * S**2 + 0.5 * X * S
    ts = TransformedSurface.from_u(u_hat * default_params.K, mirror, default_params)
    for normalizer in (SUP, S_SQUARED):
        patch = rescale(ts, (0.5, 0.5), 0.25, normalizer)
        lhs = scaled_operator(patch, default_params)
        rhs = interpolated_operator(ts, patch)
        assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(rhs).max()


def test_scaling_identity_on_solution(default_params):
    """Both sides differ by truncation at the patch spacing: within 10 (h/s)^2."""
    for n in (257, 513):
        ts = to_transformed(cached_solve(default_params, n, tol=1e-12 * default_params.K))
        h = 1.0 / (n - 1)
        s = 0.25
        patch = rescale(ts, (0.5, 0.5), s, SUP)
        gap = np.abs(scaled_operator(patch, default_params) - interpolated_operator(ts, patch)).max()
        assert gap <= 10 * (h / s) ** 2


def test_centre_value_exact(default_params):
    ts = to_transformed(cached_solve(default_params, 257))
    patch = rescale(ts, (0.5, 0.5), 0.25, S_SQUARED)
    c = PATCH_NODES // 2
    assert patch.v[c, c] == ts.u_hat[128, 128] / patch.normalizer


def test_identity_scaling_in_raw_frame(touching_surfaces):
    ts = to_transformed(touching_surfaces[0])  # h = 0.5, dtau = 0.01
    patch = rescale(ts, (50.0, 1.0), 1.0, S_SQUARED, coordinates="raw")
    assert patch.normalizer == 1.0
    for a in (0, 8, 16, 24, 32):  # Y = -1, -0.5, 0, 0.5, 1 land on y nodes 98..102
        for b in (0, 8, 16, 24, 32):  # Theta = -1 .. 1 land on tau nodes 0, 50, ..., 200
            assert patch.v[b, a] == ts.u[b * 25 // 4, 98 + a // 8]
    with pytest.raises(ValueError):
        rescale(ts, (50.0, 1.0), 1.0, coordinates="polar")


def test_residual_flags_non_solution(default_params, default_surface):
    ts = to_transformed(default_surface)
    fake = TransformedSurface.from_u(default_params.gamma * ts.y[None, :].repeat(ts.tau.size, 0), ts.grid, default_params)
    r = transformed_residual(fake)
    assert r.max_abs == pytest.approx(default_params.r * default_params.K - default_params.c, rel=1e-6)


def test_residual_bound_at_default_resolution(default_params, default_surface):
    ts = to_transformed(default_surface)
    h = ts.grid.h_max / default_params.x_max
    dt = ts.grid.dt / default_params.T
    # cash per year against K / T, the scale of the data
    bound = 5 * (h + dt) * default_params.K / default_params.T
    assert transformed_residual(ts).max_abs <= bound


def test_right_edge_closed_form(default_surface):
    from convbond.model import boundary_value_x0

    ts = to_transformed(default_surface)
    p = ts.params
    assert np.abs(ts.u[:, -1] - boundary_value_x0(p, p.T - ts.tau)).max() <= 1e-8 * p.K
