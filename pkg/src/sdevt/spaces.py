"""Truncated grids, weighted L1 norms and oscillation-based BV norms.

Functions live on a uniform rectangular grid over [-L, L]^d.  The strong
norm is the weighted L1 norm with weight (1+|x|^2)^(alpha/2) plus an
oscillation seminorm taken against a strictly positive reference
probability density psi.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of m^d cells covering the box [-L, L]^d."""

    d: int
    half_width: float
    cells_per_axis: int

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.cells_per_axis < 2:
            raise ValueError("need at least 2 cells per axis")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    @property
    def cell_width(self) -> float:
        return 2.0 * self.half_width / self.cells_per_axis

    @property
    def cell_volume(self) -> float:
        return self.cell_width**self.d

    @property
    def size(self) -> int:
        return self.cells_per_axis**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.d

    @cached_property
    def axis_centers(self) -> np.ndarray:
        m, L = self.cells_per_axis, self.half_width
        return -L + (np.arange(m) + 0.5) * self.cell_width

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centers as an (m^d, d) array, C-order over the grid shape."""
        axes = np.meshgrid(*([self.axis_centers] * self.d), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all(np.abs(pts) <= self.half_width, axis=1)


@dataclass
class GridFunction:
    """Real- or complex-valued function sampled at cell centers.

    kind="density" enforces nonnegativity and unit mass (sum * cellvol)
    to 1e-9.
    """

    grid: GridSpec
    values: np.ndarray
    kind: str = "generic"

    def __post_init__(self) -> None:
        v = np.asarray(self.values)
        if v.shape != (self.grid.size,):
            raise ValueError(f"values shape {v.shape} != ({self.grid.size},)")
        if not np.all(np.isfinite(v.real)) or (
            np.iscomplexobj(v) and not np.all(np.isfinite(v.imag))
        ):
            raise ValueError("values must be finite")
        self.values = v
        if self.kind == "density":
            if np.iscomplexobj(v):
                raise ValueError("density must be real")
            if np.any(v < 0):
                raise ValueError("density must be nonnegative")
            if abs(self.mass() - 1.0) > 1e-9:
                raise ValueError(f"density mass {self.mass()} != 1 within 1e-9")
        elif self.kind != "generic":
            raise ValueError(f"unknown kind {self.kind!r}")

    def mass(self) -> float:
        return float(np.sum(self.values.real) * self.grid.cell_volume)

    def l1(self) -> float:
        return float(np.sum(np.abs(self.values)) * self.grid.cell_volume)


@dataclass
class ReferenceMeasure:
    """Absolutely continuous probability measure with density bounded away
    from zero on the grid box (renormalized there)."""

    grid: GridSpec
    density: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.density, dtype=float)
        if v.shape != (self.grid.size,):
            raise ValueError("density shape mismatch")
        if np.min(v) <= 0:
            raise ValueError("reference density must be strictly positive")
        total = np.sum(v) * self.grid.cell_volume
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"reference measure mass {total} != 1 within 1e-6")
        self.density = v

    @property
    def sup_density(self) -> float:
        return float(np.max(self.density))


def gaussian_reference(grid: GridSpec) -> ReferenceMeasure:
    """Standard Gaussian truncated to the box and renormalized on the grid."""
    r2 = np.sum(grid.centers**2, axis=1)
    raw = np.exp(-0.5 * r2)
    raw /= np.sum(raw) * grid.cell_volume
    return ReferenceMeasure(grid, raw)


def weight(x: np.ndarray, alpha: float) -> np.ndarray | float:
    """Polynomial weight (1+|x|^2)^(alpha/2).

    A 1-d array is a single point in R^d; a 2-d (N, d) array is a batch.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        return float((1.0 + np.sum(x**2)) ** (alpha / 2.0))
    return (1.0 + np.sum(x**2, axis=-1)) ** (alpha / 2.0)


def weighted_l1_norm(f: GridFunction, alpha: float) -> float:
    w = weight(f.grid.centers, alpha)
    return float(np.sum(w * np.abs(f.values)) * f.grid.cell_volume)


def _ball_offsets(grid: GridSpec, eps: float) -> np.ndarray:
    """Boolean footprint of cell-index offsets whose centers lie within eps."""
    k = int(np.floor(eps / grid.cell_width + 1e-9))
    rng = np.arange(-k, k + 1)
    grids = np.meshgrid(*([rng] * grid.d), indexing="ij")
    dist2 = sum((g * grid.cell_width) ** 2 for g in grids)
    return dist2 <= eps**2 + 1e-12


def _osc_field(f: GridFunction, eps: float) -> np.ndarray:
    """Per-cell oscillation of f over the ball of radius eps (cells whose
    center lies within eps of the cell's center; box-truncated)."""
    grid = f.grid
    if eps < grid.cell_width - 1e-12:
        raise ValueError(
            f"eps={eps} below cell width {grid.cell_width}: unresolvable"
        )
    foot = _ball_offsets(grid, eps)
    if not np.iscomplexobj(f.values):
        arr = f.values.reshape(grid.shape)
        hi = ndimage.maximum_filter(arr, footprint=foot, mode="constant", cval=-np.inf)
        lo = ndimage.minimum_filter(arr, footprint=foot, mode="constant", cval=np.inf)
        return (hi - lo).ravel()
    # complex case: osc(f, S) = esssup_{u,v in S} |f(u) - f(v)|
    arr = f.values.reshape(grid.shape)
    offsets = np.argwhere(foot) - (np.array(foot.shape) // 2)
    padded = np.full(tuple(s + 2 * (foot.shape[0] // 2) for s in grid.shape),
                     np.nan + 0j)
    k = foot.shape[0] // 2
    inner = tuple(slice(k, k + s) for s in grid.shape)
    padded[inner] = arr
    views = []
    for off in offsets:
        sl = tuple(slice(k + o, k + o + s) for o, s in zip(off, grid.shape))
        views.append(padded[sl])
    osc = np.zeros(grid.shape)
    for i in range(len(views)):
        for j in range(i + 1, len(views)):
            diff = np.abs(views[i] - views[j])
            osc = np.fmax(osc, np.where(np.isnan(diff), 0.0, diff))
    return osc.ravel()


def oscillation_seminorm(
    f: GridFunction, psi: ReferenceMeasure, eps_list: list[float]
) -> float:
    """sup over eps of eps^{-1} * integral of osc(f, B_eps(x)) d psi(x)."""
    if not eps_list:
        raise ValueError("eps_list must be nonempty")
    best = 0.0
    cv = f.grid.cell_volume
    for eps in eps_list:
        if not 0.0 < eps <= 1.0:
            raise ValueError("eps values must lie in (0, 1]")
        osc = _osc_field(f, eps)
        best = max(best, float(np.sum(osc * psi.density) * cv / eps))
    return best


def bv_norm(
    f: GridFunction, alpha: float, psi: ReferenceMeasure, eps_list: list[float]
) -> float:
    return weighted_l1_norm(f, alpha) + oscillation_seminorm(f, psi, eps_list)


def default_eps_ladder(grid: GridSpec) -> list[float]:
    """Dyadic ladder 1, 1/2, ... truncated at max(cell width, 1/64)."""
    floor = max(grid.cell_width, 1.0 / 64.0)
    if floor > 1.0:
        raise ValueError("cell width exceeds 1: oscillation scale unresolvable")
    ladder = []
    e = 1.0
    while e >= floor - 1e-12:
        ladder.append(e)
        e /= 2.0
    return ladder


@dataclass(frozen=True)
class SupBoundReport:
    sup_abs: float
    bound: float
    d_compact: float
    slack: float
    passed: bool


def sup_bound_check(
    f: GridFunction,
    psi: ReferenceMeasure,
    box_lo: np.ndarray,
    box_hi: np.ndarray,
    alpha: float = 2.0,
    eps_list: list[float] | None = None,
) -> SupBoundReport:
    """Check sup_B |f| <= max(sup psi', 1)/d_B * ||f||_{BV_alpha} on a
    compact sub-box B, with d_B = min over B of psi(B_1(x))."""
    grid = f.grid
    lo = np.asarray(box_lo, dtype=float)
    hi = np.asarray(box_hi, dtype=float)
    if np.any(lo < -grid.half_width) or np.any(hi > grid.half_width):
        raise ValueError("compact box must lie inside the grid box")
    in_box = np.all((grid.centers >= lo) & (grid.centers <= hi), axis=1)
    if not np.any(in_box):
        raise ValueError("compact box contains no cell centers")
    if eps_list is None:
        eps_list = default_eps_ladder(grid)
    foot = _ball_offsets(grid, 1.0)
    psi_ball = ndimage.correlate(
        psi.density.reshape(grid.shape),
        foot.astype(float),
        mode="constant",
        cval=0.0,
    ).ravel() * grid.cell_volume
    d_compact = float(np.min(psi_ball[in_box]))
    norm = bv_norm(f, alpha, psi, eps_list)
    bound = max(psi.sup_density, 1.0) / d_compact * norm
    sup_abs = float(np.max(np.abs(f.values[in_box])))
    return SupBoundReport(
        sup_abs=sup_abs,
        bound=bound,
        d_compact=d_compact,
        slack=bound - sup_abs,
        passed=sup_abs <= bound,
    )
