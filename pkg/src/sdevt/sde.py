"""Drift models, hypothesis checks, and sampling of SDE paths at t_k = k*h.

Models declare their Lipschitz and dissipativity constants (with explicit
slack so the tolerance-free checks are robust to fp rounding); trajectories
are driven by per-trajectory counter-derived RNG streams so ensembles are
order-independent and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_BLOWUP = 1.0e6
STATIONARY_BURN_FACTOR = 20.0  # burn-in = 20/R2 leaves e^{-40} initial bias


class DivergenceError(RuntimeError):
    """Trajectory norm exceeded the blow-up guard (dissipativity violated
    or the fine step too large)."""


class DriftEvaluationError(ValueError):
    """Drift returned a non-finite value."""


@dataclass(frozen=True)
class DriftModel:
    """Drift field b with declared constants.

    Invariants (checked by check_lipschitz / check_dissipativity):
      |b(x)-b(y)| <= K |x-y|        and      <b(x),x> <= R1 - R2 |x|^2.
    """

    name: str
    d: int
    drift: Callable[[np.ndarray], np.ndarray]
    lipschitz_k: float
    r1: float
    r2: float
    linear_ou: bool = False

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.lipschitz_k < 0:
            raise ValueError("K must be >= 0")
        if self.r2 <= 0:
            raise ValueError("R2 must be > 0")

    def b(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the drift on an (N, d) batch (or a single (d,) point)."""
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        out = np.asarray(self.drift(np.atleast_2d(pts)), dtype=float)
        return out[0] if single else out


def _ou_drift(x: np.ndarray) -> np.ndarray:
    return -x


def make_model(name: str, dimension: int = 1, **params) -> DriftModel:
    """Built-in drift models selected by name.

    ou:            b(x) = -x
    ou_shift:      b(x) = -x + c              (param c, scalar)
    double_well:   b(x) = x - x^3 coordinatewise, Lipschitz on |x| <= box
                   (param box, default 3.0)
    custom_linear: b(x) = A x                 (param matrix, nested list)
    """
    if name == "ou":
        if params:
            raise ValueError(f"ou takes no parameters, got {sorted(params)}")
        # K, R1, R2 exact: the linear drift attains equality without rounding
        return DriftModel("ou", dimension, _ou_drift, 1.0, 0.0, 1.0,
                          linear_ou=True)
    if name == "ou_shift":
        c = float(params.pop("c", 1.0))
        if params:
            raise ValueError(f"unknown ou_shift parameters {sorted(params)}")
        shift = np.full(dimension, c)
        return DriftModel(
            "ou_shift", dimension, lambda x: -x + shift,
            lipschitz_k=1.0 + 1e-12,
            r1=(1.0 + c * c * dimension) / 2.0,
            r2=0.5,
        )
    if name == "double_well":
        box = float(params.pop("box", 3.0))
        if params:
            raise ValueError(f"unknown double_well parameters {sorted(params)}")
        if box < 1.0:
            raise ValueError("double_well box must be >= 1")
        return DriftModel(
            "double_well", dimension, lambda x: x - x**3,
            lipschitz_k=3.0 * box * box + 1.0,
            r1=dimension + 0.5,
            r2=1.0,
        )
    if name == "custom_linear":
        mat = np.asarray(params.pop("matrix"), dtype=float)
        if params:
            raise ValueError(f"unknown custom_linear parameters {sorted(params)}")
        if mat.shape != (dimension, dimension):
            raise ValueError(f"matrix shape {mat.shape} != ({dimension},{dimension})")
        sym_top = float(np.max(np.linalg.eigvalsh(0.5 * (mat + mat.T))))
        if sym_top >= 0:
            raise ValueError(
                "custom_linear needs a negative-definite symmetric part "
                f"(lambda_max = {sym_top:g})"
            )
        two_norm = float(np.linalg.norm(mat, 2))
        return DriftModel(
            "custom_linear", dimension, lambda x: x @ mat.T,
            lipschitz_k=two_norm * (1.0 + 1e-9) + 1e-12,
            r1=1e-9,
            r2=-sym_top * (1.0 - 1e-9),
        )
    raise ValueError(
        f"unknown model {name!r}; available: {sorted(BUILTIN_MODELS)}"
    )


BUILTIN_MODELS = ("ou", "ou_shift", "double_well", "custom_linear")


@dataclass(frozen=True)
class HypothesisReport:
    statistic: float  # max ratio (Lipschitz) or max violation (dissipativity)
    bound: float
    passed: bool
    samples: int


def _sample_box(d: int, count: int, radius: float, rng: np.random.Generator):
    return rng.uniform(-radius, radius, size=(count, d))


def _require_finite(values: np.ndarray, points: np.ndarray) -> None:
    bad = ~np.all(np.isfinite(values), axis=1)
    if np.any(bad):
        pt = points[np.argmax(bad)]
        raise DriftEvaluationError(f"drift not finite at {pt.tolist()}")


def check_lipschitz(
    model: DriftModel, sample_count: int, box_radius: float, rng_seed: int
) -> HypothesisReport:
    """Empirical max of |b(x)-b(y)|/|x-y| over random pairs vs declared K."""
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    if box_radius <= 0:
        raise ValueError("box_radius must be > 0")
    rng = np.random.default_rng(rng_seed)
    x = _sample_box(model.d, sample_count, box_radius, rng)
    y = _sample_box(model.d, sample_count, box_radius, rng)
    sep = np.linalg.norm(x - y, axis=1)
    keep = sep > 0
    bx, by = model.b(x), model.b(y)
    _require_finite(bx, x)
    _require_finite(by, y)
    ratio = np.linalg.norm(bx[keep] - by[keep], axis=1) / sep[keep]
    worst = float(np.max(ratio))
    return HypothesisReport(worst, model.lipschitz_k,
                            worst <= model.lipschitz_k, int(np.sum(keep)))


def check_dissipativity(
    model: DriftModel, sample_count: int, box_radius: float, rng_seed: int
) -> HypothesisReport:
    """Empirical max of <b(x),x> - (R1 - R2 |x|^2) over random samples."""
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    if box_radius <= 0:
        raise ValueError("box_radius must be > 0")
    rng = np.random.default_rng(rng_seed)
    x = _sample_box(model.d, sample_count, box_radius, rng)
    bx = model.b(x)
    _require_finite(bx, x)
    norm2 = np.sum(x * x, axis=1)
    violation = np.sum(bx * x, axis=1) - (model.r1 - model.r2 * norm2)
    worst = float(np.max(violation))
    return HypothesisReport(worst, 0.0, worst <= 0.0, sample_count)


@dataclass(frozen=True)
class SamplingPlan:
    """Discrete sampling times t_k = k*h with a fine integrator step
    delta = h/m_sub."""

    h: float
    n: int
    m_sub: int = 50
    seed: int = 0
    trajectories: int = 1

    def __post_init__(self) -> None:
        if self.h <= 0:
            raise ValueError("h must be > 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.m_sub < 1:
            raise ValueError("m_sub must be >= 1")
        if self.trajectories < 1:
            raise ValueError("trajectories must be >= 1")

    @property
    def delta(self) -> float:
        return self.h / self.m_sub

    def times(self) -> np.ndarray:
        return np.arange(self.n) * self.h


@dataclass(frozen=True)
class Trajectory:
    x0: np.ndarray
    states: np.ndarray  # (n, d), states[0] == x0

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory contains non-finite states")


def trajectory_stream(seed: int, index: int, part: int = 0) -> np.random.Generator:
    """Counter-derived stream for trajectory `index` of sub-experiment `part`."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(part, index)))


def euler_maruyama_path(
    model: DriftModel,
    x0: np.ndarray,
    plan: SamplingPlan,
    rng: np.random.Generator,
    blowup: float = DEFAULT_BLOWUP,
) -> Trajectory:
    """Euler-Maruyama with m_sub fine steps per sample, recording every
    m_sub-th state.  Fine step: x <- x + b(x) delta + sqrt(delta) xi."""
    delta = plan.delta
    sq = np.sqrt(delta)
    x = np.array(x0, dtype=float).reshape(model.d)
    states = np.empty((plan.n, model.d))
    states[0] = x
    for k in range(1, plan.n):
        for _ in range(plan.m_sub):
            x = x + model.b(x) * delta + sq * rng.standard_normal(model.d)
        if np.linalg.norm(x) > blowup:
            raise DivergenceError(
                f"trajectory diverged at t={k * plan.h:g} (|x| > {blowup:g})"
            )
        states[k] = x
    return Trajectory(states[0].copy(), states)


def ou_step_coeffs(h: float) -> tuple[float, float]:
    """One-step coefficients of the exact OU update X' = a X + s xi."""
    a = np.exp(-h)
    s = np.sqrt((1.0 - np.exp(-2.0 * h)) / 2.0)
    return float(a), float(s)


def exact_ou_path(
    x0: np.ndarray, plan: SamplingPlan, rng: np.random.Generator
) -> Trajectory:
    """Exact-in-distribution sampler for b(x) = -x: one Gaussian per step,
    X_{t+h} = e^{-h} X_t + sigma_h xi with sigma_h^2 = (1-e^{-2h})/2."""
    a, s = ou_step_coeffs(plan.h)
    x = np.atleast_1d(np.array(x0, dtype=float))
    states = np.empty((plan.n, x.size))
    states[0] = x
    for k in range(1, plan.n):
        x = a * x + s * rng.standard_normal(x.size)
        states[k] = x
    return Trajectory(states[0].copy(), states)


def sample_stationary(
    model: DriftModel,
    burn_in: float | None,
    rng: np.random.Generator,
    m_sub: int = 50,
) -> np.ndarray:
    """Endpoint of a burn-in path from the origin; approximately distributed
    by the invariant measure.  Default burn-in 20/R2."""
    if burn_in is None:
        burn_in = STATIONARY_BURN_FACTOR / model.r2
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    if burn_in == 0:
        return np.zeros(model.d)
    if model.linear_ou:
        # exact sampler: a single step of size burn_in is distribution-exact
        _, s = ou_step_coeffs(burn_in)
        return s * rng.standard_normal(model.d)
    plan = SamplingPlan(h=burn_in, n=2, m_sub=max(m_sub, int(np.ceil(burn_in / 0.02))))
    return euler_maruyama_path(model, np.zeros(model.d), plan, rng).states[-1]


def stationary_ensemble(
    model: DriftModel,
    count: int,
    master_seed: int,
    part: int = 0,
    burn_in: float | None = None,
) -> np.ndarray:
    """Vectorized stationary draws, one per-trajectory stream each."""
    if burn_in is None:
        burn_in = STATIONARY_BURN_FACTOR / model.r2
    if model.linear_ou:
        _, s = ou_step_coeffs(burn_in)
        out = np.empty((count, model.d))
        for i in range(count):
            out[i] = s * trajectory_stream(master_seed, i, part).standard_normal(model.d)
        return out
    out = np.empty((count, model.d))
    for i in range(count):
        out[i] = sample_stationary(model, burn_in, trajectory_stream(master_seed, i, part))
    return out


def ou_endpoint_ensemble(
    d: int,
    count: int,
    steps: int,
    h: float,
    master_seed: int,
    part: int = 0,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Ensemble of exact OU states after `steps` steps of size h from x0
    (origin by default).  Returns (count, d)."""
    a, s = ou_step_coeffs(h)
    start = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    out = np.empty((count, d))
    for i in range(count):
        g = trajectory_stream(master_seed, i, part)
        x = start.copy()
        if steps > 0:
            noise = g.standard_normal((steps, d))
            for k in range(steps):
                x = a * x + s * noise[k]
        out[i] = x
    return out


def em_endpoint_ensemble(
    model: DriftModel,
    count: int,
    steps: int,
    h: float,
    m_sub: int,
    master_seed: int,
    part: int = 0,
    x0: np.ndarray | None = None,
    batch: int = 512,
    blowup: float = DEFAULT_BLOWUP,
) -> np.ndarray:
    """Euler-Maruyama endpoint ensemble after `steps` sample steps of size h
    (m_sub fine steps each) from x0; per-trajectory streams, step-major
    noise.  Returns (count, d)."""
    delta = h / m_sub
    sq = np.sqrt(delta)
    start_pt = np.zeros(model.d) if x0 is None else np.asarray(x0, dtype=float)
    fine = steps * m_sub
    out = np.empty((count, model.d))
    for lo in range(0, count, batch):
        hi = min(lo + batch, count)
        nb = hi - lo
        noise = np.empty((nb, fine, model.d))
        for i in range(nb):
            g = trajectory_stream(master_seed, lo + i, part)
            noise[i] = g.standard_normal((fine, model.d))
        x = np.tile(start_pt, (nb, 1))
        for k in range(fine):
            x = x + model.b(x) * delta + sq * noise[:, k, :]
            if (k + 1) % m_sub == 0 and np.max(np.sum(x * x, axis=1)) > blowup**2:
                raise DivergenceError(
                    f"trajectory diverged at t={(k + 1) * delta:g}"
                )
        out[lo:hi] = x
    return out


@dataclass(frozen=True)
class MomentReport:
    lhs: float
    bound: float
    stderr: float
    passed: bool


def second_moment_check(
    model: DriftModel,
    states_t: np.ndarray,
    t: float,
    initial_second_moment: float = 0.0,
) -> MomentReport:
    """Check E|X_t|^2 <= e^{-2 t R2} E|X_0|^2 + (2 R1 + d)/(2 R2) within
    three standard errors."""
    pts = np.atleast_2d(states_t)
    if pts.size == 0:
        raise ValueError("empty ensemble")
    sq = np.sum(pts * pts, axis=1)
    lhs = float(np.mean(sq))
    stderr = float(np.std(sq, ddof=1) / np.sqrt(len(sq))) if len(sq) > 1 else 0.0
    bound = (
        np.exp(-2.0 * t * model.r2) * initial_second_moment
        + (2.0 * model.r1 + model.d) / (2.0 * model.r2)
    )
    return MomentReport(lhs, float(bound), stderr, lhs <= bound + 3.0 * stderr)
