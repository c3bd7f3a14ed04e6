"""Tests for quasi-distance sections, their geometry, and rescaling."""

import numpy as np
import pytest

from ma_lab.domain_grid import build_domain, discretize
from ma_lab.ma_solve import assemble_potential
from ma_lab.section_geom import (
    SectionError,
    dichotomy_classify,
    engulfing_constant,
    engulfing_samples,
    interior_heights,
    localization_fit,
    maximal_height,
    measure_c_cap,
    phi_extended,
    quasi_distance,
    rescale,
    section,
    volume_scaling,
)


def test_quasi_distance_matches_closed_form(model_square_fine):
    d2 = float(quasi_distance(model_square_fine, (0.0, 0.0), np.array([0.6, 0.8])))
    assert d2 == pytest.approx(0.5, abs=1e-4)
    assert d2 == pytest.approx(0.5000122070312499, rel=1e-12)


def test_quasi_distance_nonnegative_and_zero_at_center(pinched32):
    pot, _ = pinched32
    grid = pot.grid
    pts = grid.points(grid.in_domain)
    for c in [(0.0, 0.0), (0.4, 0.3), (-0.5, 0.1), (0.0, -0.7)]:
        vals = quasi_distance(pot, c, pts)
        assert float(np.nanmin(vals)) >= -1e-10
    assert float(quasi_distance(pot, (0.0, 0.0), np.array([0.0, 0.0]))) == 0.0


def test_quasi_distance_affine_invariance(model_square):
    grid = model_square.grid
    shifted = assemble_potential(
        grid, lambda X, Y: 0.5 * (X ** 2 + Y ** 2) + 3.0 * X - 2.0 * Y + 0.7, g=1.0
    )
    pts = grid.points(grid.in_domain)
    a = quasi_distance(model_square, (0.3, -0.2), pts)
    b = quasi_distance(shifted, (0.3, -0.2), pts)
    assert float(np.nanmax(np.abs(a - b))) <= 1e-12
    sa = section(model_square, (0.3, -0.2), 0.2)
    sb = section(shifted, (0.3, -0.2), 0.2)
    assert np.array_equal(sa.cells, sb.cells)


def test_section_measure_tracks_ball(model_square_fine):
    s_half = section(model_square_fine, (0.0, 0.0), 0.5)
    s_eighth = section(model_square_fine, (0.0, 0.0), 0.125)
    assert s_half.is_interior and s_eighth.is_interior
    assert s_half.measure == pytest.approx(np.pi, rel=2e-3)
    assert s_eighth.measure == pytest.approx(np.pi / 4.0, rel=2e-3)
    assert s_half.measure == pytest.approx(3.13897705078125, rel=1e-12)
    assert s_eighth.measure == pytest.approx(0.78424072265625, rel=1e-12)


def test_section_monotone_inclusion(model_square):
    s1 = section(model_square, (0.3, -0.2), 0.05)
    s2 = section(model_square, (0.3, -0.2), 0.2)
    assert bool(np.all(~s1.cells | s2.cells))
    assert int(s1.cells.sum()) == 325
    assert int(s2.cells.sum()) == 1289


def test_section_centroid_and_ellipsoid(model_square):
    s = section(model_square, (0.3, -0.2), 0.2)
    h = model_square.grid.spacing
    assert np.allclose(s.centroid, s.center, atol=h)
    assert np.allclose(s.ellipsoid_fit.semi_axes, np.sqrt(0.4), rtol=2e-2)


def test_section_flood_fill_keeps_one_component(model_square):
    grid = model_square.grid
    two_well = assemble_potential(
        grid, lambda X, Y: 0.25 * (X ** 2 - 1.0) ** 2 + 0.5 * Y ** 2, g=1.0
    )
    well = section(two_well, (1.0, 0.0), 0.05)
    vals = quasi_distance(two_well, (1.0, 0.0), grid.points(grid.in_domain))
    brute = np.zeros(grid.shape, dtype=bool)
    brute[grid.in_domain] = vals < 0.05
    assert bool(np.all(~well.cells | brute))
    assert int(well.cells.sum()) == 235
    assert int(brute.sum()) == 456
    assert grid.points(well.cells)[:, 0].min() > 0.0
    assert grid.points(brute)[:, 0].min() < 0.0


def test_section_height_validation_and_single_cell_warning(model_square):
    with pytest.raises(SectionError, match="positive"):
        section(model_square, (0.0, 0.0), -1.0)
    tiny = section(model_square, (0.0, 0.0), 1e-6)
    assert int(tiny.cells.sum()) == 1
    assert "single cell" in tiny.warning


def test_solved_disc_distance_matches_paraboloid(disc32):
    grid = disc32.grid
    pts = grid.points(grid.interior)
    bulk = np.hypot(pts[:, 0], pts[:, 1]) <= 0.5
    for c in [(0.0, 0.0), (0.3, 0.1), (-0.4, -0.2)]:
        got = quasi_distance(disc32, c, pts)
        i, j = grid.nearest_node(c)
        cx, cy = grid.xs[i], grid.ys[j]
        exact = 0.5 * ((pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2)
        diffs = np.abs(got - exact)
        assert float(np.nanmax(diffs[bulk])) <= 1e-4
        assert float(np.nanmax(diffs)) <= 5e-4


def test_maximal_height_on_model_disc(model_disc, model_disc_fine):
    h32 = model_disc.grid.spacing
    hbar, witness = maximal_height(model_disc, (0.5, 0.0))
    assert hbar == pytest.approx(0.10986328124935968, rel=1e-9)
    assert abs(hbar - 0.125) <= 2.5 * h32
    assert np.allclose(witness, [0.96875, 0.0])
    hbar0, _ = maximal_height(model_disc, (0.0, 0.0))
    assert hbar0 == pytest.approx(0.457519531249589, rel=1e-9)
    assert abs(hbar0 - 0.5) <= 2.5 * h32
    hbar_f, _ = maximal_height(model_disc_fine, (0.5, 0.0))
    assert abs(hbar_f - 0.125) < abs(hbar - 0.125)


def test_maximal_height_exact_on_box(model_square):
    grid = model_square.grid
    hbar, witness = maximal_height(model_square, (0.5, 0.0))
    assert hbar == pytest.approx(1.125, abs=1e-9)
    assert np.allclose(witness, [2.0, 0.0])
    hs = interior_heights(model_square)
    for c in [(0.5, 0.0), (0.0, 0.0), (-1.0, 1.0)]:
        pointwise, _ = maximal_height(model_square, c)
        assert hs[grid.nearest_node(c)] == pytest.approx(pointwise, abs=1e-9)


def test_measure_c_cap(model_square):
    assert measure_c_cap(model_square) == pytest.approx(0.1, abs=1e-12)
    assert measure_c_cap(model_square, factor=0.5) == pytest.approx(1.0, abs=1e-12)


def test_engulfing_constant_on_model(model_square):
    samples = engulfing_samples(model_square, t_values=[0.05, 0.1, 0.2], seed=0)
    rep = engulfing_constant(model_square, samples)
    assert 3.8 <= rep.theta_star <= 4.2
    assert rep.theta_star == pytest.approx(3.994140625, rel=1e-12)
    small = engulfing_samples(model_square, t_values=[0.1], n_random=0)
    extra = engulfing_samples(model_square, t_values=[0.1], n_random=8, seed=3)
    assert (
        engulfing_constant(model_square, small).theta_star
        <= engulfing_constant(model_square, small + extra).theta_star
    )
    with pytest.raises(SectionError, match="outside the section"):
        engulfing_constant(
            model_square, [(np.array([0.0, 0.0]), 0.05, np.array([1.9, 1.9]))]
        )


def test_engulfing_constant_on_solved_potential(pinched32):
    pot, _ = pinched32
    samples = engulfing_samples(
        pot, t_values=[0.02, 0.05, 0.1], centers=[(0.0, 0.0), (0.3, 0.1)], seed=1
    )
    rep = engulfing_constant(pot, samples)
    assert 3.8 <= rep.theta_star <= 4.2
    assert rep.theta_star == pytest.approx(3.9944297212009228, rel=1e-12)


def test_volume_scaling_on_model(model_square):
    heights = np.geomspace(0.02, 0.5, 8)
    pairs = [((0.0, 0.0), float(t)) for t in heights]
    pairs += [((0.3, -0.2), float(t)) for t in heights]
    fit = volume_scaling(model_square, pairs)
    assert fit.n_used == 16
    assert 0.95 <= fit.exponent <= 1.05
    assert fit.exponent == pytest.approx(1.0022209806255131, rel=1e-12)
    assert fit.C1 == pytest.approx(2.0 * np.pi, rel=0.1)
    assert fit.C2 == pytest.approx(2.0 * np.pi, rel=0.1)
    assert fit.C1 <= fit.C2


def test_volume_scaling_on_solved_potential(pinched32):
    pot, _ = pinched32
    heights = np.geomspace(0.01, 0.1, 8)
    pairs = [((0.0, 0.0), float(t)) for t in heights]
    pairs += [((0.2, -0.1), float(t)) for t in heights]
    fit = volume_scaling(pot, pairs)
    assert 0.9 <= fit.exponent <= 1.1
    assert fit.exponent == pytest.approx(0.9895738701259338, rel=1e-12)
    lean = [((0.0, -0.75), float(t)) for t in np.geomspace(0.01, 0.08, 8)]
    lean_fit = volume_scaling(pot, lean)
    assert 0.85 <= lean_fit.exponent <= 1.15
    assert lean_fit.exponent == pytest.approx(0.9011598198173538, rel=1e-12)


def test_volume_scaling_needs_enough_sections(model_square):
    with pytest.raises(SectionError, match="need 4"):
        volume_scaling(model_square, [((0.0, 0.0), 0.1)])


def test_dichotomy_interior_versus_boundary(model_square):
    inner = dichotomy_classify(model_square, (0.0, 0.0), 0.05)
    assert inner.kind == "interior"
    assert inner.boundary_point is None and inner.c_bar is None
    near = dichotomy_classify(model_square, (0.0, -1.9), 0.05)
    assert near.kind == "boundary"
    assert np.allclose(near.boundary_point, [0.0, -2.0])
    assert near.c_bar == pytest.approx(2.8613281250013314, rel=1e-9)
    finer = dichotomy_classify(model_square, (0.0, -1.9), 0.025)
    assert finer.kind == "boundary"
    assert finer.c_bar == pytest.approx(3.3203125000015454, rel=1e-9)
    assert 0.5 <= near.c_bar / finer.c_bar <= 2.0


def test_localization_flat_edge_is_half_ball(model_square):
    fit = localization_fit(model_square, (0.0, -2.0), 0.125)
    assert fit.tau == 0.0
    assert fit.k_inner == pytest.approx(1.0, abs=0.05)
    assert fit.k_outer == pytest.approx(1.0, abs=0.05)
    assert fit.k_outer == pytest.approx(0.9882117688026426, rel=1e-9)
    assert np.linalg.det(fit.triple.map_A) == pytest.approx(1.0, abs=1e-14)
    assert int(fit.cells.sum()) == 412


def test_localization_recovers_shear(model_square):
    grid = model_square.grid
    tau_true = 0.3
    sheared = assemble_potential(
        grid,
        lambda X, Y: 0.5 * (X ** 2 + Y ** 2) + tau_true * X * (Y + 2.0),
        g=1.0 - tau_true ** 2,
    )
    fit = localization_fit(sheared, (0.0, -2.0), 0.125)
    assert fit.tau == pytest.approx(-tau_true, abs=0.05)
    assert fit.k_outer <= 1.06
    assert fit.k_inner >= 0.94


def test_localization_sweep_on_solved_disc(disc64):
    ratios = []
    for h in (0.04, 0.02, 0.01):
        fit = localization_fit(disc64, (0.0, -1.0), h)
        assert fit.tau == 0.0
        ratios.append(fit.k_outer / fit.k_inner)
    assert all(r <= 4.0 for r in ratios)
    assert ratios == pytest.approx(
        [1.0719128391201111, 1.1069930108232722, 1.1214864951317631], rel=1e-9
    )


def test_localization_error_paths(model_square):
    with pytest.raises(SectionError, match="positive"):
        localization_fit(model_square, (0.0, -2.0), 0.0)
    with pytest.raises(SectionError, match="refine the grid"):
        localization_fit(model_square, (0.0, -2.0), 1e-6)


def test_rescale_sup_mode(model_square):
    grid = model_square.grid
    X, Y = grid.meshes()
    u = np.sin(X) * np.cos(Y)
    f = 1.0 + 0.5 * X
    res = rescale(model_square, u, f, (0.0, 0.0), 0.125, "linf")
    assert res.sup_after == res.sup_before
    assert np.array_equal(res.f_values, 0.125 * f[grid.in_domain])
    assert res.integral_ratio is None


def test_rescale_hessian_mode(model_square):
    grid = model_square.grid
    X, Y = grid.meshes()
    u = np.sin(X) * np.cos(Y)
    f = 1.0 + 0.5 * X
    res = rescale(model_square, u, f, (0.0, 0.0), 0.125, "w2inf")
    assert res.integral_ratio == 1.0
    assert res.sup_after / res.sup_before == pytest.approx(8.0, rel=1e-14)
    assert np.linalg.det(res.triple.map_A) == pytest.approx(1.0, abs=1e-14)
    assert res.triple.k_measured == pytest.approx(0.7155417527999328, rel=1e-12)


def test_rescale_boundary_anchor_and_errors(model_square):
    grid = model_square.grid
    X, Y = grid.meshes()
    u = np.sin(X) * np.cos(Y)
    f = 1.0 + 0.5 * X
    res = rescale(model_square, u, f, (0.0, -2.0), 0.125, "linf")
    assert res.sup_after == res.sup_before
    assert res.triple.k_measured == pytest.approx(0.7155417527999328, rel=1e-12)
    with pytest.raises(ValueError, match="unknown rescale mode"):
        rescale(model_square, u, f, (0.0, 0.0), 0.125, "huh")
    with pytest.raises(SectionError, match="maximal interior height"):
        rescale(model_square, u, f, (0.0, 0.0), 5.0, "linf")


def test_phi_extended_values_and_nan(model_square):
    vals = phi_extended(model_square, np.array([[5.0, 5.0], [0.5, 0.25]]))
    assert np.isnan(vals[0])
    assert vals[1] == pytest.approx(0.15625, abs=1e-12)
