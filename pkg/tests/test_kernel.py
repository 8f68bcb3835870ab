import numpy as np
import pytest

from sdevt import kernel, sde, spaces


# --- deterministic flow ---------------------------------------------------

def test_flow_ou_exact_exponential():
    out = kernel.deterministic_flow(sde.make_model("ou"), np.array([1.0]), np.log(2.0))
    assert abs(out[0] - 0.5) < 1e-8


def test_flow_zero_drift_identity():
    model = sde.DriftModel("zero", 2, lambda x: 0.0 * x, 0.0, 1e-9, 1.0)
    x = np.array([0.3, -1.2])
    assert np.allclose(kernel.deterministic_flow(model, x, 3.0), x, atol=1e-14)


def test_flow_ou_shift_closed_form():
    # oracle: x' = -x + 1 from 0 gives 1 - e^{-t}
    out = kernel.deterministic_flow(sde.make_model("ou_shift", c=1.0),
                                    np.array([0.0]), 1.0)
    assert abs(out[0] - (1 - np.exp(-1.0))) < 1e-8


def test_flow_batch_matches_single():
    model = sde.make_model("ou")
    pts = np.array([[1.0], [2.0], [-0.5]])
    batch = kernel.deterministic_flow(model, pts, 0.7)
    singles = np.stack([kernel.deterministic_flow(model, p, 0.7) for p in pts])
    assert np.allclose(batch, singles, atol=1e-14)


# --- exact OU kernel ------------------------------------------------------

def test_ou_density_peak_at_stationarity():
    # N(0,1/2) peak = 1/sqrt(pi)
    val = kernel.ou_transition_density(np.array([0.0]), np.array([0.0]), 30.0)
    assert abs(val - 1.0 / np.sqrt(np.pi)) < 1e-9


def test_ou_density_even_in_y():
    ys = np.array([[0.7], [-0.7]])
    vals = kernel.ou_transition_density(np.array([0.0]), ys, 0.8)
    assert vals[0] == vals[1]


def test_ou_density_normalizes():
    # quadrature over +-8 sigma at t=0.5
    sig = np.sqrt(kernel.ou_variance(0.5))
    ys = np.linspace(-8 * sig + np.exp(-0.5), 8 * sig + np.exp(-0.5), 8001)
    vals = kernel.ou_transition_density(np.array([1.0]), ys[:, None], 0.5)
    mass = np.trapezoid(vals, ys)
    assert abs(mass - 1.0) < 1e-6


def test_ou_density_requires_positive_time():
    with pytest.raises(ValueError):
        kernel.ou_transition_density(np.array([0.0]), np.array([0.0]), 0.0)


# --- composed kernel ------------------------------------------------------

def test_composed_single_substep_is_plain_gaussian():
    model = sde.DriftModel("zero", 1, lambda x: 0.0 * x, 0.0, 1e-9, 1.0)
    grid = spaces.GridSpec(1, 6.0, 256)
    f, loss = kernel.composed_transition_density(model, np.array([0.5]), grid,
                                                 0.3, substeps=1)
    direct = np.exp(-(grid.centers[:, 0] - 0.5) ** 2 / 0.6) / np.sqrt(0.6 * np.pi)
    assert np.allclose(f.values, direct, rtol=1e-12)
    assert abs(loss) < 1e-9


def test_composed_vs_exact_ou_frozen_l1():
    # oracle = exact OU density; frozen from the oracle run:
    #   s=10 -> 0.0194, s=20 -> 0.0096, s=40 -> 0.0048 (first-order in t/s)
    model = sde.make_model("ou")
    grid = spaces.GridSpec(1, 6.0, 512)
    exact = kernel.ou_transition_density(np.array([0.0]), grid.centers, 0.5)
    l1 = {}
    for s in (10, 20, 40):
        f, _ = kernel.composed_transition_density(model, np.array([0.0]), grid,
                                                  0.5, substeps=s)
        l1[s] = float(np.sum(np.abs(f.values - exact)) * grid.cell_volume)
    assert abs(l1[10] - 0.0194) < 2e-3
    assert l1[20] < 0.01
    assert l1[10] > l1[20] > l1[40]


def test_composed_truncation_error_advises_larger_box():
    grid = spaces.GridSpec(1, 1.0, 64)
    with pytest.raises(kernel.TruncationError, match="enlarge the grid box"):
        kernel.composed_transition_density(sde.make_model("ou"), np.array([0.8]),
                                           grid, 0.5, substeps=10)


def test_composed_mass_monotone_in_box_size():
    model = sde.make_model("ou")
    big = spaces.GridSpec(1, 6.0, 256)
    small = spaces.GridSpec(1, 2.5, 128)
    f_big, loss_big = kernel.composed_transition_density(model, np.array([0.5]),
                                                         big, 0.5, substeps=10)
    f_small, loss_small = kernel.composed_transition_density(model, np.array([0.5]),
                                                             small, 0.5, substeps=10)
    assert f_big.mass() >= f_small.mass()
    assert loss_big <= loss_small


def test_choose_substeps_stiffness_aware():
    grid = spaces.GridSpec(1, 6.0, 256)
    assert kernel.choose_substeps(sde.make_model("ou"), grid, 0.5) == 10
    stiff_grid = spaces.GridSpec(1, 9.0, 384)
    s = kernel.choose_substeps(sde.make_model("double_well"), stiff_grid, 0.5)
    assert s >= 200  # local Jacobian ~ 3 L^2 forces a fine substep


def test_grid_semigroup_error_collapses_with_refinement():
    # applying the t-kernel twice vs the 2t-kernel: the grid quadrature
    # defect (aliasing) drops far faster than 2x per refinement
    from sdevt.kernel import ou_kernel_matrix

    t = 0.02
    errs = {}
    for m in (64, 128):
        grid = spaces.GridSpec(1, 6.0, m)
        mt = ou_kernel_matrix(grid, t)
        m2t = ou_kernel_matrix(grid, 2 * t)
        f = np.exp(-grid.centers[:, 0] ** 2) / np.sqrt(np.pi)
        errs[m] = np.sum(np.abs(mt @ (mt @ f) - m2t @ f)) * grid.cell_volume
    assert errs[64] < 1e-3
    assert errs[128] <= errs[64] / 2


# --- two-sided bound checks ----------------------------------------------

def test_aronson_valid_constants_no_violations():
    tk = kernel.TransitionKernel(sde.make_model("ou"), 0.5, "exact_ou")
    rep = kernel.check_aronson(tk, kernel.AronsonConstants(0.4, 3.0),
                               10_000, 3.0, rng_seed=7)
    assert rep.violations == 0
    assert rep.passed


def test_aronson_center_case_bounds_ordered():
    # at y = theta_t(x): lower = C0^{-1} t^{-d/2} <= upper = C0 t^{-d/2}
    c = kernel.AronsonConstants(0.4, 3.0)
    t = 0.5
    zero = np.zeros(1)
    low = kernel.gaussian_comparison(1 / c.lambda0, t, zero) / c.c0
    up = c.c0 * kernel.gaussian_comparison(c.lambda0, t, zero)
    assert 0 < low <= up


def test_aronson_tight_constants_violated():
    # C0=1, lambda0=1 cannot hold: exact variance != t/2
    tk = kernel.TransitionKernel(sde.make_model("ou"), 0.5, "exact_ou")
    rep = kernel.check_aronson(tk, kernel.AronsonConstants(1.0, 1.0),
                               5_000, 3.0, rng_seed=7)
    assert rep.violations > 0
    assert not rep.passed
    assert len(rep.worst_pairs) > 0


def test_transition_kernel_mode_validation():
    with pytest.raises(ValueError, match="linear_ou"):
        kernel.TransitionKernel(sde.make_model("double_well"), 0.5, "exact_ou")
    with pytest.raises(ValueError, match="grid"):
        kernel.TransitionKernel(sde.make_model("double_well"), 0.5, "composed")


def test_composed_kernel_density_evaluation():
    grid = spaces.GridSpec(1, 6.0, 512)
    tk = kernel.TransitionKernel(sde.make_model("ou"), 0.5, "composed",
                                 substeps=20, grid=grid)
    approx = tk.density(np.array([0.3]), np.array([0.1]))
    exact = kernel.ou_transition_density(np.array([0.3]), np.array([0.1]), 0.5)
    assert abs(approx - exact) < 0.05 * exact + 1e-3
