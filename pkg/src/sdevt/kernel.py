"""Transition densities S_t(x, y): exact for the linear drift, short-time
Gaussian composition otherwise, plus the deterministic flow and two-sided
Gaussian-bound checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sde import DriftModel
from .spaces import GridFunction, GridSpec

MAX_TRUNCATION_LOSS = 0.01
DEFAULT_SUBSTEP = 0.05  # short-time Gaussian valid for t/s <= 0.05


class TruncationError(RuntimeError):
    """Too much probability mass leaves the grid box."""


def deterministic_flow(model: DriftModel, x: np.ndarray, t: float) -> np.ndarray:
    """Noiseless flow theta_t(x) by fixed-step RK4; step sized so the local
    error stays below 1e-8 for the declared Lipschitz constant."""
    if t < 0:
        raise ValueError("t must be >= 0")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if t == 0:
        return x[0] if x.shape[0] == 1 else x
    step = min(0.025 / max(model.lipschitz_k, 1.0), t)
    steps = int(np.ceil(t / step))
    dt = t / steps
    y = x.copy()
    for _ in range(steps):
        k1 = model.b(y)
        k2 = model.b(y + 0.5 * dt * k1)
        k3 = model.b(y + 0.5 * dt * k2)
        k4 = model.b(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y[0] if y.shape[0] == 1 else y


def ou_variance(t: float) -> float:
    """Per-coordinate variance of the exact OU transition, (1-e^{-2t})/2."""
    return (1.0 - np.exp(-2.0 * t)) / 2.0


def ou_transition_density(x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray | float:
    """Exact kernel for b(x) = -x: product of N(e^{-t} x_i, sigma_t^2) at y.

    y may be a batch (N, d); x is a single point (d,).
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ys = np.atleast_2d(np.asarray(y, dtype=float))
    var = ou_variance(t)
    mean = np.exp(-t) * x
    norm = (2.0 * np.pi * var) ** (-x.size / 2.0)
    dens = norm * np.exp(-np.sum((ys - mean) ** 2, axis=1) / (2.0 * var))
    return float(dens[0]) if np.asarray(y).ndim == 1 else dens


def _gaussian_matrix(grid: GridSpec, means: np.ndarray, var: float) -> np.ndarray:
    """Matrix G[j, i] = density of N(means[i], var*I) at center j, times the
    cell volume (dimension-factored product of 1-d Gaussians)."""
    centers = grid.centers
    out = np.ones((grid.size, grid.size))
    coef = 1.0 / np.sqrt(2.0 * np.pi * var)
    for dim in range(grid.d):
        diff = centers[:, dim][:, None] - means[None, :, dim]
        out *= coef * np.exp(-(diff**2) / (2.0 * var))
    return out * grid.cell_volume


def ou_kernel_matrix(grid: GridSpec, h: float) -> np.ndarray:
    """Exact OU transfer weights S_h(x_i, x_j) * cellvol for b(x) = -x."""
    return _gaussian_matrix(grid, np.exp(-h) * grid.centers, ou_variance(h))


def euler_step_matrix(model: DriftModel, grid: GridSpec, dt: float) -> np.ndarray:
    """One-substep frozen-drift Gaussian N(x + b(x) dt, dt I) on the grid."""
    means = grid.centers + model.b(grid.centers) * dt
    return _gaussian_matrix(grid, means, dt)


def composed_kernel_matrix(
    model: DriftModel, grid: GridSpec, t: float, substeps: int
) -> np.ndarray:
    """s-fold composition of the one-substep kernel (Chapman-Kolmogorov at
    grid level)."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    g = euler_step_matrix(model, grid, t / substeps)
    return np.linalg.matrix_power(g, substeps)


def grid_stiffness(model: DriftModel, grid: GridSpec) -> float:
    """Crude Jacobian bound of the drift over the grid box: max over axes of
    finite-difference partials, inf-norm over components."""
    vals = model.b(grid.centers).reshape(grid.shape + (grid.d,))
    worst = 0.0
    for axis in range(grid.d):
        partial = np.abs(np.diff(vals, axis=axis)) / grid.cell_width
        worst = max(worst, float(np.max(np.sum(partial, axis=-1))))
    return worst


def choose_substeps(model: DriftModel, grid: GridSpec, t: float) -> int:
    """Substep count keeping t/s <= 0.05 and the frozen-drift step stable
    (t/s <= 0.5 / local Jacobian bound) over the whole grid box.

    The substep Gaussian must also stay resolvable on the grid
    (sqrt(t/s) >= ~cell width), otherwise quadrature aliasing breaks the
    Markov structure; when stability and resolution conflict the grid is
    too coarse and an error asks for more cells.
    """
    s = max(1, int(np.ceil(t / DEFAULT_SUBSTEP)))
    k_grid = grid_stiffness(model, grid)
    if k_grid > 0:
        s = max(s, int(np.ceil(2.0 * t * k_grid)))
    dt = t / s
    if dt < 0.9 * grid.cell_width**2:
        raise ValueError(
            f"grid too coarse: stable substep {dt:.2e} is below the "
            f"resolution limit {grid.cell_width**2:.2e}; increase cells per axis"
        )
    return s


def default_substeps(t: float) -> int:
    return max(1, int(np.ceil(t / DEFAULT_SUBSTEP)))


def composed_transition_density(
    model: DriftModel,
    x: np.ndarray,
    grid: GridSpec,
    t: float,
    substeps: int | None = None,
) -> tuple[GridFunction, float]:
    """Density of X_t(x) on the grid by short-time Gaussian composition.

    Returns (density values on cells, truncation loss).  Raises if more than
    1% of the mass leaves the box.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    s = choose_substeps(model, grid, t) if substeps is None else substeps
    if s < 1:
        raise ValueError("substeps must be >= 1")
    dt = t / s
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = x + model.b(x) * dt
    coef = (2.0 * np.pi * dt) ** (-grid.d / 2.0)
    v = coef * np.exp(-np.sum((grid.centers - mean) ** 2, axis=1) / (2.0 * dt))
    if s > 1:
        g = euler_step_matrix(model, grid, dt)
        for _ in range(s - 1):
            v = g @ v
    loss = 1.0 - float(np.sum(v) * grid.cell_volume)
    if loss > MAX_TRUNCATION_LOSS:
        raise TruncationError(
            f"truncation loss {loss:.3%} > 1%: enlarge the grid box "
            f"(half-width {grid.half_width})"
        )
    return GridFunction(grid, v), loss


@dataclass(frozen=True)
class TransitionKernel:
    """Evaluation handle for S_t(x, y)."""

    model: DriftModel
    t: float
    mode: str = "exact_ou"  # or "composed"
    substeps: int | None = None
    grid: GridSpec | None = None

    def __post_init__(self) -> None:
        if self.t <= 0:
            raise ValueError("t must be > 0")
        if self.mode not in ("exact_ou", "composed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "exact_ou" and not self.model.linear_ou:
            raise ValueError("exact_ou mode requires a linear_ou model")
        if self.mode == "composed" and self.grid is None:
            raise ValueError("composed mode needs a grid")

    def density(self, x: np.ndarray, y: np.ndarray) -> float:
        if self.mode == "exact_ou":
            return float(ou_transition_density(x, np.atleast_1d(y), self.t))
        f, _ = composed_transition_density(
            self.model, x, self.grid, self.t, self.substeps
        )
        idx = self._nearest_cell(np.atleast_1d(y))
        return float(f.values[idx])

    def _nearest_cell(self, y: np.ndarray) -> int:
        g = self.grid
        ids = np.clip(
            np.floor((y + g.half_width) / g.cell_width).astype(int),
            0,
            g.cells_per_axis - 1,
        )
        return int(np.ravel_multi_index(tuple(ids), g.shape))


@dataclass(frozen=True)
class AronsonConstants:
    lambda0: float
    c0: float

    def __post_init__(self) -> None:
        if not 0.0 < self.lambda0 <= 1.0:
            raise ValueError("lambda0 must lie in (0, 1]")
        if self.c0 < 1.0:
            raise ValueError("C0 must be >= 1")


def gaussian_comparison(lam: float, t: float, x: np.ndarray) -> np.ndarray | float:
    """g_lambda(t, x) = t^{-d/2} exp(-lambda |x|^2 / t) (not normalized)."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    vals = t ** (-xs.shape[1] / 2.0) * np.exp(-lam * np.sum(xs * xs, axis=1) / t)
    return float(vals[0]) if np.asarray(x).ndim == 1 else vals


@dataclass(frozen=True)
class AronsonReport:
    checked: int
    violations: int
    worst_pairs: list = field(default_factory=list)
    passed: bool = True


def check_aronson(
    kernel: TransitionKernel,
    constants: AronsonConstants,
    pair_count: int,
    box_radius: float,
    rng_seed: int,
) -> AronsonReport:
    """Sample (x, y) pairs and verify
    C0^{-1} g_{1/lambda0}(t, theta_t(x)-y) <= S_t(x,y)
                                         <= C0 g_{lambda0}(t, theta_t(x)-y).
    Report-only: lists violating pairs."""
    rng = np.random.default_rng(rng_seed)
    d = kernel.model.d
    xs = rng.uniform(-box_radius, box_radius, size=(pair_count, d))
    ys = rng.uniform(-box_radius, box_radius, size=(pair_count, d))
    flows = deterministic_flow(kernel.model, xs, kernel.t)
    flows = np.atleast_2d(flows)
    diff = flows - ys
    lower = gaussian_comparison(1.0 / constants.lambda0, kernel.t, diff) / constants.c0
    upper = constants.c0 * gaussian_comparison(constants.lambda0, kernel.t, diff)
    if kernel.mode == "exact_ou":
        var = ou_variance(kernel.t)
        mean = np.exp(-kernel.t) * xs
        dens = (2.0 * np.pi * var) ** (-d / 2.0) * np.exp(
            -np.sum((ys - mean) ** 2, axis=1) / (2.0 * var)
        )
    else:
        dens = np.array([kernel.density(x, y) for x, y in zip(xs, ys)])
    bad = (dens < np.atleast_1d(lower)) | (dens > np.atleast_1d(upper))
    idx = np.flatnonzero(bad)
    worst = [
        (xs[i].tolist(), ys[i].tolist(), float(dens[i]))
        for i in idx[:10]
    ]
    return AronsonReport(
        checked=pair_count,
        violations=int(np.sum(bad)),
        worst_pairs=worst,
        passed=not np.any(bad),
    )
