"""Tests for paraboloid openings, quasi-Euclidean masks, and bad-set decay."""

import numpy as np
import pytest

from ma_lab.domain_grid import ScalarField, fd_derivatives
from ma_lab.good_sets import (
    GoodSetError,
    decay_fit,
    density_in_section,
    good_set_survey,
    inclusion_check,
    local_quasi_euclidean_mask,
    minimal_opening,
    minimal_opening_field,
    quasi_euclidean_constant,
    quasi_euclidean_ratio_min,
    tangent_trust_region,
)
from ma_lab.lma_solve import solve_lma
from ma_lab.section_geom import section


@pytest.fixture(scope="module")
def pinched_lma(pinched32):
    pot, sol = pinched32
    return pot, sol.u.values


def test_opening_of_the_potential_is_two(model_disc):
    openings = minimal_opening_field(model_disc, model_disc.phi.values)
    finite = np.isfinite(openings)
    assert int(finite.sum()) == 2957
    assert bool(np.all(openings[finite] == 2.0))


def test_opening_of_affine_data_vanishes(model_disc):
    grid = model_disc.grid
    X, Y = grid.meshes()
    aff = 3.0 * X - 2.0 * Y + 0.7
    assert minimal_opening(model_disc, aff, (0.2, 0.1)) <= 1e-10


def test_opening_matches_brute_force_scan(model_disc):
    grid = model_disc.grid
    X, Y = grid.meshes()
    u = np.sin(np.pi * X) * np.sin(np.pi * Y)
    got = minimal_opening(model_disc, u, (0.25, -0.125))

    vals = np.where(grid.in_domain, u, np.nan)
    grad, _ = fd_derivatives(ScalarField(grid, vals))
    i, j = grid.nearest_node((0.25, -0.125))
    ni, nj = np.nonzero(grid.in_domain)
    dx = grid.xs[ni] - grid.xs[i]
    dy = grid.ys[nj] - grid.ys[j]
    phi = model_disc.phi.values
    D = phi[ni, nj] - phi[i, j] - model_disc.grad.gx[i, j] * dx - model_disc.grad.gy[i, j] * dy
    num = np.abs(vals[ni, nj] - vals[i, j] - grad.gx[i, j] * dx - grad.gy[i, j] * dy)
    ok = D >= 2.0 * grid.spacing ** 2
    brute = 2.0 * float(np.max(num[ok] / D[ok]))
    assert got == brute
    assert got == pytest.approx(19.204882274266588, rel=1e-12)


def test_opening_error_paths(pinched_lma):
    pot, u = pinched_lma
    with pytest.raises(GoodSetError, match="too coarse"):
        minimal_opening(pot, u, (0.0, 0.0), d_min=1e6)
    with pytest.raises(GoodSetError, match="interior node"):
        minimal_opening(pot, u, (0.0, -0.999))


def test_opening_stable_against_distance_floor(pinched_lma):
    pot, u = pinched_lma
    h = pot.grid.spacing
    full = minimal_opening(pot, u, (0.3, 0.2))
    halved = minimal_opening(pot, u, (0.3, 0.2), d_min=h ** 2)
    assert halved == pytest.approx(full, rel=1e-12)


def test_quasi_euclidean_ratio_exact_on_model(model_disc):
    rm = quasi_euclidean_ratio_min(model_disc)
    measurable = np.isfinite(rm)
    assert int(measurable.sum()) == 2453
    assert bool(np.all(rm[measurable] == 0.5))


def test_quasi_euclidean_masks_on_model(model_disc):
    rm = quasi_euclidean_ratio_min(model_disc)
    n_meas = int(np.isfinite(rm).sum())
    at_half = local_quasi_euclidean_mask(model_disc, 0.5, ratio_min=rm)
    above = local_quasi_euclidean_mask(model_disc, 0.6, ratio_min=rm)
    tiny = local_quasi_euclidean_mask(model_disc, 1e-9, ratio_min=rm)
    assert int(at_half.sum()) == n_meas
    assert int(above.sum()) == 0
    assert int(tiny.sum()) == n_meas
    with pytest.raises(GoodSetError, match="positive"):
        local_quasi_euclidean_mask(model_disc, -0.5)


def test_quasi_euclidean_constant_values(model_disc, pinched_lma):
    assert quasi_euclidean_constant(model_disc) == 2.0
    pot, _ = pinched_lma
    assert quasi_euclidean_constant(pot) == pytest.approx(1.9072687752022557, rel=1e-12)


def test_quasi_euclidean_boundary_layer_exits_first(pinched_lma):
    pot, _ = pinched_lma
    grid = pot.grid
    X, Y = grid.meshes()
    R = np.hypot(X, Y)
    rm = quasi_euclidean_ratio_min(pot)
    measurable = np.isfinite(rm)
    masks = {s: local_quasi_euclidean_mask(pot, s, ratio_min=rm) for s in (0.35, 0.45, 0.5)}
    assert bool(np.all(masks[0.45] <= masks[0.35]))
    assert bool(np.all(masks[0.5] <= masks[0.45]))
    assert [int(masks[s].sum()) for s in (0.35, 0.45, 0.5)] == [2453, 2373, 1909]
    for s in (0.45, 0.5):
        exited = measurable & ~masks[s]
        assert float(R[exited].mean()) > float(R[masks[s]].mean())
    assert float(R[measurable & ~masks[0.45]].mean()) == pytest.approx(0.865790, abs=1e-6)
    assert float(R[masks[0.45]].mean()) == pytest.approx(0.572610, abs=1e-6)
    corr = np.corrcoef(R[measurable], rm[measurable])[0, 1]
    assert corr == pytest.approx(-0.7550024915975293, rel=1e-9)


def test_inclusion_with_potential_as_solution(pinched_lma):
    pot, _ = pinched_lma
    rep = inclusion_check(pot, pot.phi.values, 10.0, 2.0)
    assert rep.passed and rep.n_violations == 0
    assert rep.c_inst == pytest.approx(1.9072687752022557, rel=1e-12)
    trivial = inclusion_check(pot, pot.phi.values, 1e4, 2.0)
    assert trivial.n_level == 0 and trivial.passed


def test_inclusion_with_lma_solution(pinched_lma):
    pot, u = pinched_lma
    levels = []
    for beta in (1.15, 1.3, 1.5):
        rep = inclusion_check(pot, u, beta, 1.15)
        assert rep.n_violations == 0
        assert rep.fraction == 0.0
        assert rep.passed
        levels.append(rep.n_level)
    assert levels == [1083, 461, 38]


def test_inclusion_input_validation(pinched_lma):
    pot, u = pinched_lma
    with pytest.raises(GoodSetError, match="m > 1"):
        inclusion_check(pot, u, 2.0, 1.0)


def test_decay_fit_recovers_planted_exponents():
    betas = np.geomspace(1.0, 50.0, 12)
    fit = decay_fit([(b, b ** -2.0) for b in betas])
    assert fit.tau == pytest.approx(2.0, abs=1e-3)
    assert fit.C == pytest.approx(1.0, rel=1e-9)
    assert fit.residual < 1e-12
    fit2 = decay_fit([(b, 3.0 * b ** -0.5) for b in betas])
    assert fit2.tau == pytest.approx(0.5, abs=1e-3)
    assert fit2.C == pytest.approx(3.0, abs=1e-3)
    with pytest.raises(GoodSetError, match="at least 5"):
        decay_fit([(1.0, 1.0)] * 3)


def test_survey_distributions_on_lma(pinched_lma):
    pot, u = pinched_lma
    bg = np.geomspace(1.45, 2.5, 10)
    sv = good_set_survey(pot, u, bg, m=2.0, M_grid=(2.0, 4.0, 8.0), sigma_grid=(0.35, 0.45))
    assert sv.F2 == pytest.approx(
        [2.887695, 2.887695, 2.875, 2.831055, 2.762695, 2.662109, 2.481445, 2.276367, 2.021484, 1.616211],
        abs=1e-6,
    )
    assert bool(np.all(np.diff(sv.F2) <= 1e-12))
    assert sv.F[0] == pytest.approx(0.001953, abs=1e-6)
    assert bool(np.all(sv.F[1:] == 0.0))
    assert bool(np.all(sv.F1 == 0.0))
    assert bool(np.all(sv.good_masks[2.0] <= sv.good_masks[4.0]))
    assert bool(np.all(sv.good_masks[4.0] <= sv.good_masks[8.0]))
    assert bool(np.all(sv.quasi_masks[0.45] <= sv.quasi_masks[0.35]))
    assert "F1" not in sv.fits
    fit = sv.fits["F2"]
    assert fit.tau > 0.0
    assert fit.tau == pytest.approx(0.8484149269284558, rel=1e-12)
    assert fit.residual < 0.1
    assert fit.n_used == 10


def test_density_in_section_sweep(pinched_lma):
    pot, u = pinched_lma
    grid = pot.grid
    X, Y = grid.meshes()
    s = section(pot, (0.0, 0.0), 0.1)
    assert density_in_section(pot, pot.phi.values, s, 2.0 * 0.1) == 1.0
    assert density_in_section(pot, pot.phi.values, s, 0.19) == 0.0
    assert density_in_section(pot, 1.0 + 0.3 * X - 0.2 * Y, s, 0.05) == 1.0
    sweep = [density_in_section(pot, u, s, N) for N in (0.2, 0.25, 0.28, 0.3, 0.5)]
    assert bool(np.all(np.diff(sweep) >= 0))
    assert sweep[-1] == 1.0
    assert sweep[:3] == pytest.approx(
        [0.04433497536945813, 0.4318555008210181, 0.9178981937602627], rel=1e-12
    )
    with pytest.raises(GoodSetError, match="positive"):
        density_in_section(pot, u, s, -1.0)


def test_tangent_trust_region_counts(model_disc):
    grid = model_disc.grid
    t3 = tangent_trust_region(model_disc)
    assert int(t3.sum()) == 2453
    assert bool(np.all(t3 <= grid.in_domain))
    assert bool(np.array_equal(tangent_trust_region(model_disc, margin=0), grid.in_domain))
