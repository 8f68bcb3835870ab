import os

import numpy as np
import pytest

from sdevt import sde, spaces, transfer
from sdevt.kernel import TruncationError


# --- build ------------------------------------------------------------------

def test_columns_nearly_stochastic(ou_matrix):
    sums = ou_matrix.column_sums()
    assert sums.min() >= 0.99
    assert sums.max() <= 1.0 + 1e-9


def test_kernel_strictly_positive(ou_matrix):
    assert ou_matrix.mat.min() > 0.0


def test_zero_drift_kernel_symmetric():
    # formal check on the raw one-step kernel: S_h(x, y) = S_h(y, x) for b = 0
    from sdevt.kernel import euler_step_matrix

    model = sde.DriftModel("zero", 1, lambda x: 0.0 * x, 0.0, 1e-12, 1.0)
    grid = spaces.GridSpec(1, 6.0, 128)
    g = euler_step_matrix(model, grid, 0.05)
    assert np.allclose(g, g.T, atol=1e-15)
    # banded: entries decay fast off the diagonal
    assert g[0, -1] < 1e-100 * g[0, 0]


def test_analytic_density_is_near_fixed_point(ou_matrix, ou_analytic_density):
    push = ou_matrix.mat @ ou_analytic_density
    err = np.sum(np.abs(push - ou_analytic_density)) * ou_matrix.grid.cell_volume
    assert err < 1e-3


def test_box_too_small_rejected(ou_model):
    with pytest.raises(ValueError, match="half-width"):
        transfer.build_transfer_matrix(ou_model, 0.5, spaces.GridSpec(1, 3.0, 128))


def test_exact_kernel_requires_linear_model():
    with pytest.raises(ValueError, match="linear_ou"):
        transfer.build_transfer_matrix(sde.make_model("double_well"), 0.5,
                                       spaces.GridSpec(1, 9.0, 256),
                                       kernel_mode="exact_ou")


def test_truncation_loss_rejected(ou_model):
    # at h=0.01 the edge columns are half-Gaussians losing ~27% of their mass
    with pytest.raises(TruncationError, match="enlarge the grid box"):
        transfer.build_transfer_matrix(ou_model, 0.01, spaces.GridSpec(1, 6.0, 256))


def test_coarse_grid_rejected_for_stiff_drift():
    # stability wants dt ~ 1/(3 L^2); resolution wants dt >= cellwidth^2
    with pytest.raises(ValueError, match="grid too coarse"):
        transfer.build_transfer_matrix(sde.make_model("double_well"), 0.5,
                                       spaces.GridSpec(1, 9.0, 256))


def test_stiff_drift_fixed_point_matches_gibbs_oracle():
    # composed-kernel route vs the closed-form stationary law exp(-2V)/Z
    model = sde.make_model("double_well")
    grid = spaces.GridSpec(1, 9.0, 384)
    m = transfer.build_transfer_matrix(model, 0.5, grid)
    assert m.substeps and m.substeps >= 200
    f0 = transfer.invariant_density(m).eigenfunction
    x = grid.centers[:, 0]
    gibbs = np.exp(-2.0 * (-(x**2) / 2 + x**4 / 4))
    gibbs /= np.sum(gibbs) * grid.cell_volume
    assert np.sum(np.abs(f0.values - gibbs)) * grid.cell_volume < 5e-3


# --- invariant density -------------------------------------------------------

def test_invariant_density_matches_analytic(ou_matrix, ou_f0, ou_analytic_density):
    err = np.sum(np.abs(ou_f0.values - ou_analytic_density)) * ou_matrix.grid.cell_volume
    assert err < 1e-2


def test_invariant_density_strictly_positive(ou_f0):
    assert ou_f0.values.min() > 0.0


def test_invariant_density_even(ou_f0):
    flipped = ou_f0.values[::-1]
    assert np.sum(np.abs(ou_f0.values - flipped)) * ou_f0.grid.cell_volume < 1e-6


def test_invariant_density_converged(ou_matrix):
    res = transfer.invariant_density(ou_matrix)
    assert res.eigenvalue == 1.0
    assert res.residual < 1e-9


def test_invariant_density_requires_plain(ou_matrix):
    holed = transfer.apply_hole(ou_matrix, transfer.HoleSpec(np.array([0.0]), 0.05))
    with pytest.raises(ValueError, match="plain"):
        transfer.invariant_density(holed)


# --- holes -------------------------------------------------------------------

def test_hole_spec_geometry(ou_grid):
    hole = transfer.HoleSpec(np.array([0.0]), 0.05)
    assert hole.u_level == pytest.approx(-np.log(0.05))
    idx = hole.cell_indices(ou_grid)
    assert len(idx) == 4
    assert hole.lebesgue(ou_grid) == pytest.approx(4 * ou_grid.cell_volume)
    wide = transfer.HoleSpec(np.array([0.0]), ou_grid.cell_width)
    assert len(wide.cell_indices(ou_grid)) >= 1  # nonempty for r >= cell width


def test_tiny_hole_is_noop(ou_matrix):
    hole = transfer.HoleSpec(np.array([0.0]), 0.004)  # captures no centers
    holed = transfer.apply_hole(ou_matrix, hole)
    assert np.array_equal(holed.mat, ou_matrix.mat)


def test_whole_box_hole_zeroes_matrix(ou_matrix):
    holed = transfer.apply_hole(ou_matrix, transfer.HoleSpec(np.array([0.0]), 10.0))
    assert np.all(holed.mat == 0.0)


def test_hole_center_outside_box_rejected(ou_matrix):
    with pytest.raises(ValueError, match="outside"):
        transfer.apply_hole(ou_matrix, transfer.HoleSpec(np.array([7.0]), 0.1))


def test_mass_deficit_equals_hole_measure(ou_matrix, ou_f0):
    hole = transfer.HoleSpec(np.array([0.0]), 0.05)
    holed = transfer.apply_hole(ou_matrix, hole)
    deficit = 1.0 - np.sum(holed.mat @ ou_f0.values) * ou_matrix.grid.cell_volume
    assert abs(deficit - transfer.hole_measure(ou_f0, hole)) < 1e-8


def test_hole_on_holed_rejected(ou_matrix):
    holed = transfer.apply_hole(ou_matrix, transfer.HoleSpec(np.array([0.0]), 0.05))
    with pytest.raises(ValueError):
        transfer.apply_hole(holed, transfer.HoleSpec(np.array([0.0]), 0.1))


# --- leading eigenvalue -------------------------------------------------------

def test_plain_leading_eigenvalue_is_one(ou_matrix):
    res = transfer.leading_eigenvalue(ou_matrix)
    assert abs(res.eigenvalue - 1.0) <= 1e-9
    assert res.residual <= 1e-9


def test_holed_eigenvalue_first_order(ou_matrix, ou_f0):
    hole = transfer.HoleSpec(np.array([0.0]), 0.05)
    holed = transfer.apply_hole(ou_matrix, hole)
    res = transfer.leading_eigenvalue(holed)
    mu = transfer.hole_measure(ou_f0, hole)
    ratio = (1.0 - float(np.real(res.eigenvalue))) / mu
    assert 0.7 <= ratio <= 1.3
    dense_lam, _, _ = transfer.dense_spectral_data(holed)
    assert abs(res.eigenvalue - dense_lam) <= 1e-8


def test_twist_by_full_turn_is_identity(ou_matrix):
    hole = transfer.HoleSpec(np.array([0.0]), 0.05)
    twisted = transfer.apply_twist(ou_matrix, hole, 2.0 * np.pi)
    res = transfer.leading_eigenvalue(twisted)
    assert abs(res.eigenvalue - 1.0) <= 1e-9


def test_zero_matrix_eigenvalue_zero(ou_matrix):
    holed = transfer.apply_hole(ou_matrix, transfer.HoleSpec(np.array([0.0]), 10.0))
    res = transfer.leading_eigenvalue(holed)
    assert res.eigenvalue == 0.0


# --- first-order response quantities -----------------------------------------

@pytest.fixture(scope="module")
def kl_reports(ou_matrix, ou_f0):
    out = {}
    for r in (0.1, 0.05, 0.025):
        hole = transfer.HoleSpec(np.array([0.0]), r)
        holed = transfer.apply_hole(ou_matrix, hole)
        out[r] = transfer.kl_quantities(ou_matrix, holed, ou_f0, k_max=20)
    return out


def test_q_nonnegative_and_sum_below_one(kl_reports):
    for rep in kl_reports.values():
        assert np.all(rep.q >= 0.0)
        assert rep.q_sum <= 1.0 + 1e-9


def test_q_max_shrinks_linearly_with_hole_size(kl_reports):
    # max_k q ~ 0.70 * Leb(B) across the ladder (kernel sup at the origin)
    ratios = [np.max(rep.q) / rep.lebesgue_hole for rep in kl_reports.values()]
    assert max(ratios) - min(ratios) < 0.05
    maxima = [np.max(kl_reports[r].q) for r in (0.1, 0.05, 0.025)]
    assert maxima[0] > maxima[1] > maxima[2]


def test_q_bounded_by_kernel_sup_estimate(kl_reports):
    # per-k bound: Leb(B) * C_h * (C_h Leb(B) / mu(B))
    for rep in kl_reports.values():
        bound = rep.lebesgue_hole * rep.kernel_sup ** 2 * rep.lebesgue_hole / rep.mu_hole
        assert np.max(rep.q) <= bound


def test_kl_lambda_prediction_fields(kl_reports):
    rep = kl_reports[0.025]
    assert rep.lambda_prediction == pytest.approx(1.0 - rep.theta * rep.mu_hole)
    assert rep.pi_bound == pytest.approx(rep.kernel_sup * rep.lebesgue_hole)


def test_empty_hole_measure_rejected(ou_matrix, ou_f0):
    hole = transfer.HoleSpec(np.array([0.0]), 0.004)
    holed = transfer.apply_hole(ou_matrix, hole)
    with pytest.raises(ValueError, match="zero invariant mass"):
        transfer.kl_quantities(ou_matrix, holed, ou_f0)


# --- survival via the operator ------------------------------------------------

def test_survival_no_steps_is_one(ou_matrix, ou_f0):
    holed = transfer.apply_hole(ou_matrix, transfer.HoleSpec(np.array([0.0]), 0.05))
    assert transfer.evl_via_operator(holed, ou_f0, 0) == pytest.approx(1.0)


def test_survival_without_hole_stays_one(ou_matrix, ou_f0):
    assert abs(transfer.evl_via_operator(ou_matrix, ou_f0, 50) - 1.0) < 1e-6


def test_survival_off_center_hole_near_target(ou_matrix, ou_f0, ou_grid):
    # single-cell hole with mu ~ 1/200 so n*mu(B) = 1 at n ~ 200
    cellmass = ou_f0.values * ou_grid.cell_volume
    j = int(np.argmin(np.abs(cellmass - 1.0 / 200.0)))
    hole = transfer.HoleSpec(ou_grid.centers[j], ou_grid.cell_width * 0.49)
    mu = transfer.hole_measure(ou_f0, hole)
    n = int(round(1.0 / mu))
    surv = transfer.evl_via_operator(transfer.apply_hole(ou_matrix, hole), ou_f0, n)
    assert 0.33 <= surv <= 0.41


def test_survival_matches_spectral_decomposition(ou_matrix, ou_f0, ou_grid):
    hole = transfer.HoleSpec(np.array([0.0]), ou_grid.cell_width)
    holed = transfer.apply_hole(ou_matrix, hole)
    mu = transfer.hole_measure(ou_f0, hole)
    n = int(round(1.0 / mu))
    direct = transfer.evl_via_operator(holed, ou_f0, n)
    lam, f_n, ell = transfer.dense_spectral_data(holed)
    pairing = float(np.real(np.sum(ell * ou_f0.values))) * ou_grid.cell_volume
    assert abs(direct - float(np.real(lam)) ** n * pairing) < 1e-4


# --- norm-contraction fit ------------------------------------------------------

def test_ly_fit_plain_contracts(ou_matrix, ou_psi):
    from sdevt.experiments import _ly_test_set

    fit = transfer.lasota_yorke_fit([ou_matrix], _ly_test_set(ou_matrix.grid), ou_psi)
    assert fit.passed and fit.lam < 1.0
    assert fit.a >= 0 and fit.b >= 0


def test_ly_fit_uniform_over_two_hole_radii(ou_matrix, ou_psi):
    from sdevt.experiments import _ly_test_set

    holed = [
        transfer.apply_hole(ou_matrix, transfer.HoleSpec(np.array([0.0]), r))
        for r in (0.1, 0.05)
    ]
    fit = transfer.lasota_yorke_fit(holed, _ly_test_set(ou_matrix.grid), ou_psi)
    assert fit.passed and fit.lam < 1.0


def test_one_step_smoothing_collapses_bv_to_weak_norm(ou_matrix, ou_psi):
    # rough inputs with very different BV norms map to comparable BV norms,
    # bounded by a constant times the weighted-L1 norm alone
    grid = ou_matrix.grid
    eps = spaces.default_eps_ladder(grid)
    cv = grid.cell_volume
    rough = []
    for width in (1.0, 0.2, grid.cell_width):  # ever thinner indicators
        vals = (np.abs(grid.centers[:, 0] - 0.4) <= width / 2).astype(float)
        vals /= np.sum(vals) * cv
        rough.append(spaces.GridFunction(grid, vals, kind="density"))
    before = [spaces.bv_norm(f, 2.0, ou_psi, eps) / spaces.weighted_l1_norm(f, 2.0)
              for f in rough]
    after = [
        spaces.bv_norm(spaces.GridFunction(grid, ou_matrix.mat @ f.values),
                       2.0, ou_psi, eps) / spaces.weighted_l1_norm(f, 2.0)
        for f in rough
    ]
    assert max(before) / min(before) > 10.0  # inputs genuinely rough vs smooth
    assert max(after) <= 2.0                 # frozen one-step constant


def test_gradient_smoothing_constant_uniform(ou_matrix):
    from sdevt.experiments import _ly_test_set

    fns = _ly_test_set(ou_matrix.grid)
    ratios = [transfer.gradient_sup(ou_matrix, f.values) / f.l1() for f in fns]
    c_fit = 1.5 * max(ratios[:2])
    assert all(r <= c_fit for r in ratios[2:])


# --- twisted expansion ----------------------------------------------------------

def test_twist_small_angle_near_one(ou_matrix, ou_f0):
    hole = transfer.HoleSpec(np.array([0.0]), 0.05)
    row = transfer.twisted_eigenvalue_expansion(ou_matrix, hole, [1e-2], ou_f0)[0]
    assert abs(row.iota - 1.0) < 1e-3


def test_twist_modulus_bounded_by_one(ou_matrix, ou_f0):
    hole = transfer.HoleSpec(np.array([0.0]), 0.05)
    for row in transfer.twisted_eigenvalue_expansion(
        ou_matrix, hole, [0.5, 1.5, np.pi, 5.0], ou_f0
    ):
        assert abs(row.iota) <= 1.0 + 1e-12


def test_twist_pi_within_half_mu(ou_matrix, ou_f0):
    hole = transfer.HoleSpec(np.array([0.0]), 0.05)
    row = transfer.twisted_eigenvalue_expansion(ou_matrix, hole, [np.pi], ou_f0)[0]
    assert row.error <= 0.5 * row.mu_hole


# --- duality and persistence -----------------------------------------------------

def test_duality_transpose_identity(ou_matrix):
    rng = np.random.default_rng(10)
    holed = transfer.apply_hole(ou_matrix, transfer.HoleSpec(np.array([0.0]), 0.05))
    for _ in range(5):
        phi = rng.uniform(-1, 1, ou_matrix.grid.size)
        f = rng.uniform(-1, 1, ou_matrix.grid.size)
        a = phi @ (holed.mat @ f)
        b = (holed.mat.T @ phi) @ f
        assert abs(a - b) <= 1e-12 * max(abs(a), 1.0)


def test_matrix_dump_roundtrip(tmp_path, ou_matrix):
    path = os.path.join(tmp_path, "op.tmat")
    transfer.save_matrix(ou_matrix, path)
    loaded = transfer.load_matrix(path)
    assert loaded.grid == ou_matrix.grid
    assert loaded.h == ou_matrix.h
    assert np.array_equal(loaded.mat, ou_matrix.mat)


def test_matrix_dump_rejects_complex(tmp_path, ou_matrix):
    twisted = transfer.apply_twist(ou_matrix, transfer.HoleSpec(np.array([0.0]), 0.05),
                                   np.pi / 2)
    with pytest.raises(ValueError, match="real"):
        transfer.save_matrix(twisted, os.path.join(tmp_path, "x.tmat"))


# --- two dimensions ---------------------------------------------------------------

def test_two_dimensional_pipeline():
    model = sde.make_model("ou", dimension=2)
    grid = spaces.GridSpec(2, 6.0, 48)
    m = transfer.build_transfer_matrix(model, 0.5, grid)
    f0 = transfer.invariant_density(m).eigenfunction
    analytic = np.exp(-np.sum(grid.centers**2, axis=1)) / np.pi
    err = np.sum(np.abs(f0.values - analytic)) * grid.cell_volume
    assert err < 1e-2
    hole = transfer.HoleSpec(np.array([0.0, 0.0]), 0.4)
    res = transfer.leading_eigenvalue(transfer.apply_hole(m, hole))
    mu = transfer.hole_measure(f0, hole)
    ratio = (1.0 - float(np.real(res.eigenvalue))) / mu
    assert 0.7 <= ratio <= 1.3
