"""Finite-dimensional transfer operators: Ulam-type cell-center collocation
of the Markov kernel, hole and twist perturbations, leading eigenvalues, and
the first-order eigenvalue-response quantities."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .kernel import (
    TruncationError,
    choose_substeps,
    composed_kernel_matrix,
    ou_kernel_matrix,
)
from .sde import DriftModel
from .spaces import (
    GridFunction,
    GridSpec,
    ReferenceMeasure,
    bv_norm,
    default_eps_ladder,
    weighted_l1_norm,
)

MAX_COLUMN_LOSS = 0.01


def column_overshoot_tolerance(substeps: int | None) -> float:
    """Quadrature aliasing is ~3e-8 per resolved substep and compounds
    multiplicatively under composition."""
    return 1e-6 + 1e-7 * (substeps or 0)


class ConvergenceError(RuntimeError):
    """Power iteration failed to converge."""


@dataclass(frozen=True)
class HoleSpec:
    """Rare-event ball B(x0, r); on a grid, a cell belongs to the hole iff
    its center does."""

    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, float)))
        if self.radius <= 0:
            raise ValueError("hole radius must be > 0")

    @property
    def u_level(self) -> float:
        """Threshold level u with radius e^{-u}."""
        return float(-np.log(self.radius))

    def cell_indices(self, grid: GridSpec) -> np.ndarray:
        dist = np.linalg.norm(grid.centers - self.center, axis=1)
        return np.flatnonzero(dist <= self.radius)

    def mask(self, grid: GridSpec) -> np.ndarray:
        out = np.zeros(grid.size, dtype=bool)
        out[self.cell_indices(grid)] = True
        return out

    def lebesgue(self, grid: GridSpec) -> float:
        return len(self.cell_indices(grid)) * grid.cell_volume


@dataclass
class TransferMatrix:
    """M[j, i] ~ S_h(x_i, x_j) * cellvol; columns index source cells.

    variant: "plain" | "holed" | "twisted".
    """

    grid: GridSpec
    h: float
    mat: np.ndarray
    variant: str = "plain"
    hole: HoleSpec | None = None
    twist: float | None = None
    substeps: int | None = None  # None for exactly evaluated kernels

    def column_sums(self) -> np.ndarray:
        return np.real(self.mat).sum(axis=0)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.mat @ values


def build_transfer_matrix(
    model: DriftModel,
    h: float,
    grid: GridSpec,
    kernel_mode: str = "auto",
    substeps: int | None = None,
) -> TransferMatrix:
    """Discretize L_h by evaluating the kernel between cell centers.

    The box must hold essentially all stationary mass: half-width at least
    6 sqrt((2 R1 + d)/(2 R2)); columns must retain >= 99% of their mass.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    if grid.d != model.d:
        raise ValueError("grid and model dimension mismatch")
    required = 6.0 * np.sqrt((2.0 * model.r1 + model.d) / (2.0 * model.r2))
    if grid.half_width < required:
        raise ValueError(
            f"grid half-width {grid.half_width} below {required:.3g} needed "
            "to hold the stationary mass"
        )
    if kernel_mode == "auto":
        kernel_mode = "exact_ou" if model.linear_ou else "composed"
    used_substeps = None
    if kernel_mode == "exact_ou":
        if not model.linear_ou:
            raise ValueError("exact_ou kernel requires a linear_ou model")
        mat = ou_kernel_matrix(grid, h)
    elif kernel_mode == "composed":
        used_substeps = choose_substeps(model, grid, h) if substeps is None else substeps
        mat = composed_kernel_matrix(model, grid, h, used_substeps)
    else:
        raise ValueError(f"unknown kernel_mode {kernel_mode!r}")
    sums = mat.sum(axis=0)
    worst = float(np.min(sums))
    if worst < 1.0 - MAX_COLUMN_LOSS:
        raise TruncationError(
            f"column mass loss {1.0 - worst:.3%} > 1%: enlarge the grid box"
        )
    overshoot = float(np.max(sums))
    if overshoot > 1.0 + column_overshoot_tolerance(used_substeps):
        raise TruncationError(
            f"column sums reach {overshoot:.6f} > 1: kernel under-resolved; "
            "increase cells per axis or adjust substeps"
        )
    return TransferMatrix(grid, h, mat, "plain", substeps=used_substeps)


def apply_hole(m: TransferMatrix, hole: HoleSpec) -> TransferMatrix:
    """Zero the rows whose target cell center lies in the hole."""
    if m.variant != "plain":
        raise ValueError("holes apply to the plain operator")
    if not np.all(np.abs(hole.center) <= m.grid.half_width):
        raise ValueError("hole center outside the grid box")
    mask = hole.mask(m.grid)
    mat = m.mat.copy()
    mat[mask, :] = 0.0
    return TransferMatrix(m.grid, m.h, mat, "holed", hole=hole)


def apply_twist(m: TransferMatrix, hole: HoleSpec, s: float) -> TransferMatrix:
    """Multiply row j by e^{i s 1_B(x_j)} (unit-modulus twist)."""
    if m.variant != "plain":
        raise ValueError("twists apply to the plain operator")
    if not np.all(np.abs(hole.center) <= m.grid.half_width):
        raise ValueError("hole center outside the grid box")
    mask = hole.mask(m.grid)
    phase = np.where(mask, np.exp(1j * s), 1.0 + 0j)
    return TransferMatrix(
        m.grid, m.h, phase[:, None] * m.mat, "twisted", hole=hole, twist=s
    )


def hole_measure(f0: GridFunction, hole: HoleSpec) -> float:
    """mu(B_n) under the grid rule (cells whose center lies in the ball)."""
    idx = hole.cell_indices(f0.grid)
    return float(np.sum(f0.values[idx]) * f0.grid.cell_volume)


@dataclass(frozen=True)
class SpectralResult:
    eigenvalue: complex
    eigenfunction: GridFunction
    residual: float
    iterations: int


def invariant_density(
    m: TransferMatrix,
    tol_change: float = 1e-10,
    tol_residual: float = 1e-9,
    max_iter: int = 100_000,
) -> SpectralResult:
    """Fixed point of the plain operator by mass-renormalized power iteration
    from the uniform density."""
    if m.variant != "plain":
        raise ValueError("invariant density needs the plain operator")
    cv = m.grid.cell_volume
    v = np.full(m.grid.size, 1.0 / (m.grid.size * cv))
    for it in range(1, max_iter + 1):
        w = m.mat @ v
        residual = float(np.sum(np.abs(w - v)) * cv)  # ||Mv - v||_1, pre-renorm
        w /= np.sum(w) * cv
        change = float(np.sum(np.abs(w - v)) * cv)
        v = w
        if change < tol_change or residual < tol_residual:
            break
    else:
        raise ConvergenceError(f"no convergence in {max_iter} iterations")
    return SpectralResult(1.0, GridFunction(m.grid, v, kind="density"), residual, it)


def leading_eigenvalue(
    m: TransferMatrix,
    residual_tol: float = 1e-9,
    max_iter: int = 100_000,
) -> SpectralResult:
    """Dominant eigenvalue by L1-normalized power iteration.

    Real variants: lambda is the asymptotic mass ratio ||Mv||_1/||v||_1.
    Twisted variant: the integral ratio sum(Mv)/sum(v).
    """
    cv = m.grid.cell_volume
    complex_case = np.iscomplexobj(m.mat)
    v = np.full(m.grid.size, 1.0 / (m.grid.size * cv),
                dtype=complex if complex_case else float)
    lam_prev: complex | None = None
    for it in range(1, max_iter + 1):
        w = m.mat @ v
        if complex_case:
            lam = complex(np.sum(w) / np.sum(v))
        else:
            lam = float(np.sum(np.abs(w)) * cv)  # ||v||_1 == 1 by normalization
        residual = float(np.sum(np.abs(w - lam * v)) * cv)
        norm = np.sum(np.abs(w)) * cv
        if norm == 0.0:
            return SpectralResult(0.0, GridFunction(m.grid, w), 0.0, it)
        v = w / norm
        if residual <= residual_tol * max(1.0, abs(lam)):
            eig = lam if complex_case else float(np.real(lam))
            return SpectralResult(eig, GridFunction(m.grid, v), residual, it)
        lam_prev = lam
    gap = abs(lam - lam_prev) if lam_prev is not None else float("nan")
    raise ConvergenceError(
        f"eigenvalue iteration not converged after {max_iter} iterations; "
        f"last two ratio gap {gap:g}, residual {residual:g}"
    )


def dense_spectral_data(m: TransferMatrix):
    """Dense eigensolve oracle: returns (lambda, right density f_n with unit
    mass, left functional ell with <ell, f_n> = 1 under the grid integral)."""
    vals, right = np.linalg.eig(m.mat)
    k = int(np.argmax(np.abs(vals)))
    lam = vals[k]
    f = right[:, k]
    cv = m.grid.cell_volume
    f = f / (np.sum(f) * cv)
    lvals, lvecs = np.linalg.eig(m.mat.T)
    kl = int(np.argmin(np.abs(lvals - lam)))
    ell = lvecs[:, kl]
    ell = ell / (np.sum(ell * f) * cv)
    if abs(np.imag(lam)) < 1e-12:
        lam = float(np.real(lam))
        f = np.real(f)
        ell = np.real(ell)
    return lam, f, ell


@dataclass(frozen=True)
class KLReport:
    """First-order response data of the holed operator."""

    mu_hole: float          # Delta_n = mu(B_n)
    lebesgue_hole: float
    kernel_sup: float       # C_h = sup of the discretized kernel
    pi_bound: float         # C_h * Leb(B_n)
    q: np.ndarray           # q_{k,n}, k = 0..k_max
    theta: float            # 1 - sum_k q_{k,n}
    lambda_prediction: float  # 1 - theta * Delta_n

    @property
    def q_sum(self) -> float:
        return float(np.sum(self.q))


def kl_quantities(
    m_plain: TransferMatrix,
    m_holed: TransferMatrix,
    f0: GridFunction,
    k_max: int = 20,
) -> KLReport:
    """q_{k,n} = <1, (M - M_n) M_n^k (M - M_n) f0> / mu(B_n) and friends."""
    if m_holed.hole is None:
        raise ValueError("holed operator required")
    grid = m_plain.grid
    cv = grid.cell_volume
    mask = m_holed.hole.mask(grid)
    mu = hole_measure(f0, m_holed.hole)
    if mu <= 0.0:
        raise ValueError("hole has zero invariant mass")
    w = m_plain.mat @ f0.values
    u = np.where(mask, w, 0.0)  # (M - M_n) f0, supported on hole cells
    q = np.empty(k_max + 1)
    for k in range(k_max + 1):
        step = m_plain.mat @ u
        q[k] = float(np.sum(step[mask]) * cv) / mu
        u = np.where(mask, 0.0, step)  # M_n applied once more
    kernel_sup = float(np.max(m_plain.mat)) / cv
    leb = m_holed.hole.lebesgue(grid)
    theta = 1.0 - float(np.sum(q))
    return KLReport(
        mu_hole=mu,
        lebesgue_hole=leb,
        kernel_sup=kernel_sup,
        pi_bound=kernel_sup * leb,
        q=q,
        theta=theta,
        lambda_prediction=1.0 - theta * mu,
    )


def evl_via_operator(m_holed: TransferMatrix, f0: GridFunction, n_steps: int) -> float:
    """Total mass of M_n^n f0: the operator-route survival probability."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    v = f0.values.copy()
    for _ in range(n_steps):
        v = m_holed.mat @ v
    return float(np.sum(v) * m_holed.grid.cell_volume)


@dataclass(frozen=True)
class LYFit:
    a: float
    lam: float
    b: float
    sse: float
    passed: bool
    norms: dict = field(default_factory=dict)


def lasota_yorke_fit(
    matrices: list[TransferMatrix],
    test_set: list[GridFunction],
    psi: ReferenceMeasure,
    alpha: float = 2.0,
    eps_list: list[float] | None = None,
    n_max: int = 8,
    lam_grid: np.ndarray | None = None,
) -> LYFit:
    """Fit ||M^n f||_{BV_a} <= A lam^n ||f||_{BV_a} + B ||f||_{L1} uniformly
    over the test set (and over all supplied matrices, e.g. several hole
    radii), searching lam < 1 and solving a constrained least squares in
    (A, B) per lam."""
    if not test_set:
        raise ValueError("test_set must be nonempty")
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    grid = matrices[0].grid
    if eps_list is None:
        eps_list = default_eps_ladder(grid)
    if lam_grid is None:
        lam_grid = np.linspace(0.05, 0.95, 19)
    rows = []  # (n, strong norm of f, weak norm of f, strong norm of M^n f)
    norms: dict = {}
    for mi, m in enumerate(matrices):
        for fi, f in enumerate(test_set):
            s0 = bv_norm(f, alpha, psi, eps_list)
            w0 = f.l1()
            v = f.values.copy()
            seq = [s0]
            for n in range(1, n_max + 1):
                v = m.mat @ v
                sn = bv_norm(GridFunction(grid, v), alpha, psi, eps_list)
                seq.append(sn)
                rows.append((n, s0, w0, sn))
            norms[(mi, fi)] = seq
    rows_arr = np.array(rows)
    best = None
    for lam in lam_grid:
        # minimize sum of squared slack, s.t. A lam^n s0 + B w0 >= sn, A,B >= 0
        design = np.stack([lam ** rows_arr[:, 0] * rows_arr[:, 1], rows_arr[:, 2]], axis=1)
        target = rows_arr[:, 3]

        def objective(ab):
            resid = design @ ab - target
            return float(np.sum(resid**2))

        cons = [{"type": "ineq", "fun": lambda ab, D=design, t=target: D @ ab - t}]
        x0 = np.array([max(1.0, np.max(target / np.maximum(design[:, 0], 1e-12))),
                       np.max(target / np.maximum(design[:, 1], 1e-12))])
        res = optimize.minimize(
            objective, x0, bounds=[(0, None), (0, None)], constraints=cons,
            method="SLSQP", options={"maxiter": 200, "ftol": 1e-10},
        )
        if not res.success:
            continue
        slack = design @ res.x - target
        if np.min(slack) < -1e-6 * max(1.0, float(np.max(target))):
            continue
        if best is None or res.fun < best[3]:
            best = (float(res.x[0]), float(lam), float(res.x[1]), float(res.fun))
    if best is None:
        return LYFit(np.nan, np.nan, np.nan, np.inf, False, norms)
    a, lam, b, sse = best
    return LYFit(a, lam, b, sse, lam < 1.0, norms)


@dataclass(frozen=True)
class TwistRow:
    s: float
    iota: complex
    predicted: complex
    mu_hole: float

    @property
    def error(self) -> float:
        return float(abs(self.iota - self.predicted))


def twisted_eigenvalue_expansion(
    m_plain: TransferMatrix,
    hole: HoleSpec,
    s_list: list[float],
    f0: GridFunction,
) -> list[TwistRow]:
    """Leading eigenvalue of the twisted operator vs the first-order
    prediction 1 - (1 - e^{is}) mu(B_n)."""
    mu = hole_measure(f0, hole)
    rows = []
    for s in s_list:
        twisted = apply_twist(m_plain, hole, s)
        res = leading_eigenvalue(twisted)
        pred = 1.0 - (1.0 - np.exp(1j * s)) * mu
        rows.append(TwistRow(s=float(s), iota=complex(res.eigenvalue),
                             predicted=complex(pred), mu_hole=mu))
    return rows


def gradient_sup(m: TransferMatrix, values: np.ndarray) -> float:
    """Sup over cells of |grad (M f)| by central differences on the grid."""
    out = m.mat @ values
    field_nd = out.reshape(m.grid.shape)
    grads = np.gradient(field_nd, m.grid.cell_width)
    if m.grid.d == 1:
        grads = [grads]
    return float(np.max(np.sqrt(sum(g**2 for g in grads))))


_MAGIC = b"TMAT"


def save_matrix(m: TransferMatrix, path: str) -> None:
    """Binary dump: magic, int32 d, int32 m, float64 L, float64 h, then
    row-major float64 entries (real variants only)."""
    if np.iscomplexobj(m.mat):
        raise ValueError("binary dump supports real variants only")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<iidd", m.grid.d, m.grid.cells_per_axis,
                             m.grid.half_width, m.h))
        fh.write(np.ascontiguousarray(m.mat, dtype="<f8").tobytes())


def load_matrix(path: str) -> TransferMatrix:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a transfer-matrix dump")
        d, cells, half_width, h = struct.unpack("<iidd", fh.read(24))
        grid = GridSpec(d, half_width, cells)
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(grid.size, grid.size)
    return TransferMatrix(grid, h, data.copy(), "plain")
