"""Monte Carlo rare-event statistics of sampled SDE paths: threshold
calibration n*mu(B_n) = tau, survival-probability (max-law) estimation,
Poisson visit counts, time-refinement, and i.i.d. block-sequence runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special, stats

from .sde import (
    DriftModel,
    SamplingPlan,
    ou_step_coeffs,
    trajectory_stream,
)
from .spaces import GridFunction

CALIBRATION_RTOL = 1e-6  # well inside the 1e-4 * tau contract
DEFAULT_BATCH = 512


def log_distance_observable(x: np.ndarray, center: np.ndarray) -> np.ndarray:
    """-log |x - x0|: large values = close encounters with x0."""
    x = np.atleast_2d(x)
    return -np.log(np.linalg.norm(x - center, axis=1))


class StationaryOUMeasure:
    """Exact invariant law of b(x) = -x: N(0, I/2)."""

    def __init__(self, d: int):
        self.d = d

    def ball_mass(self, center: np.ndarray, r: float) -> float:
        center = np.atleast_1d(np.asarray(center, float))
        if r <= 0:
            return 0.0
        if self.d == 1:
            c = float(center[0])
            return 0.5 * float(special.erf(c + r) - special.erf(c - r))
        # |X - c|^2 * 2 ~ noncentral chi-square(d, 2|c|^2)
        nc = 2.0 * float(np.sum(center**2))
        if nc == 0.0:
            return float(stats.chi2.cdf(2.0 * r * r, df=self.d))
        return float(stats.ncx2.cdf(2.0 * r * r, df=self.d, nc=nc))

    def max_radius(self) -> float:
        return np.inf


class GridMeasure:
    """Ball masses of a grid stationary density, with the cell-mass cdf
    interpolated linearly in the radius so calibration is solvable."""

    def __init__(self, f0: GridFunction):
        self.f0 = f0
        self.grid = f0.grid

    def _profile(self, center: np.ndarray):
        dist = np.linalg.norm(self.grid.centers - np.atleast_1d(center), axis=1)
        order = np.argsort(dist)
        return dist[order], np.cumsum(self.f0.values[order]) * self.grid.cell_volume

    def ball_mass(self, center: np.ndarray, r: float) -> float:
        dist, cum = self._profile(center)
        return float(np.interp(r, dist, cum, left=0.0))

    def max_radius(self) -> float:
        return float(2.0 * self.grid.half_width * np.sqrt(self.grid.d))


@dataclass(frozen=True)
class ThresholdPlan:
    """Calibrated rare-event ball: n * mu(B(x0, r)) = tau."""

    tau: float
    center: np.ndarray
    n: int
    radius: float
    mu_ball: float

    @property
    def u_level(self) -> float:
        return float(-np.log(self.radius))

    @property
    def intensity(self) -> float:
        return self.n * self.mu_ball


def calibrate_threshold(measure, center: np.ndarray, n: int, tau: float) -> ThresholdPlan:
    """Solve n * mu(B(x0, r)) = tau for the radius by bracketing + brentq."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    center = np.atleast_1d(np.asarray(center, float))
    target = tau / n
    if target >= 1.0:
        raise ValueError(f"tau/n = {target:g} exceeds the total mass")
    hi = 1.0
    cap = measure.max_radius()
    while measure.ball_mass(center, hi) < target:
        hi *= 2.0
        if hi > max(1e6, cap):
            raise ValueError("target mass unreachable: tau/n too large")
    hi = min(hi, cap) if np.isfinite(cap) else hi
    lo = 1e-300
    r = optimize.brentq(
        lambda rr: measure.ball_mass(center, rr) - target,
        lo, hi, rtol=CALIBRATION_RTOL, maxiter=200,
    )
    mu = measure.ball_mass(center, r)
    if abs(n * mu - tau) > 1e-4 * tau:
        raise RuntimeError(f"calibration residual {abs(n*mu-tau):g} above 1e-4*tau")
    return ThresholdPlan(tau=tau, center=center, n=n, radius=float(r), mu_ball=float(mu))


def _ou_visit_counts(
    d: int,
    center: np.ndarray,
    radii: np.ndarray,
    horizons: np.ndarray,
    h: float,
    trials: int,
    master_seed: int,
    part: int = 0,
    burn_in: float = 20.0,
    batch: int = DEFAULT_BATCH,
) -> np.ndarray:
    """Visit counts to balls B(center, r) along exact OU paths.

    Per trajectory stream: first d draws give the stationary initial state
    (single exact step of size burn_in from the origin), then step-major
    path noise.  Returns (len(radii), trials) counts over steps
    0..horizon_r - 1.
    """
    steps = int(np.max(horizons))
    a, s = ou_step_coeffs(h)
    _, s0 = ou_step_coeffs(burn_in)
    counts = np.zeros((len(radii), trials), dtype=np.int64)
    r2 = np.asarray(radii, float) ** 2
    for start in range(0, trials, batch):
        stop = min(start + batch, trials)
        nb = stop - start
        noise = np.empty((nb, steps, d))
        for i in range(nb):
            g = trajectory_stream(master_seed, start + i, part)
            noise[i] = g.standard_normal((steps, d))
        x = s0 * noise[:, 0, :]
        dist2 = np.sum((x - center) ** 2, axis=1)
        for ri, rr in enumerate(r2):
            counts[ri, start:stop] += dist2 <= rr
        for k in range(1, steps):
            x = a * x + s * noise[:, k, :]
            dist2 = np.sum((x - center) ** 2, axis=1)
            for ri, rr in enumerate(r2):
                if k < horizons[ri]:
                    counts[ri, start:stop] += dist2 <= rr
    return counts


def _em_visit_counts(
    model: DriftModel,
    center: np.ndarray,
    radii: np.ndarray,
    horizons: np.ndarray,
    h: float,
    m_sub: int,
    trials: int,
    master_seed: int,
    part: int = 0,
    burn_in: float | None = None,
    batch: int = DEFAULT_BATCH,
    blowup: float = 1.0e6,
) -> np.ndarray:
    """Euler-Maruyama analogue of _ou_visit_counts for general drifts."""
    steps = int(np.max(horizons))
    delta = h / m_sub
    sq = np.sqrt(delta)
    if burn_in is None:
        burn_in = 20.0 / model.r2
    burn_fine = int(np.ceil(burn_in / delta))
    counts = np.zeros((len(radii), trials), dtype=np.int64)
    r2 = np.asarray(radii, float) ** 2
    total_fine = burn_fine + (steps - 1) * m_sub
    for start in range(0, trials, batch):
        stop = min(start + batch, trials)
        nb = stop - start
        noise = np.empty((nb, total_fine, model.d))
        for i in range(nb):
            g = trajectory_stream(master_seed, start + i, part)
            noise[i] = g.standard_normal((total_fine, model.d))
        x = np.zeros((nb, model.d))
        for j in range(burn_fine):
            x = x + model.b(x) * delta + sq * noise[:, j, :]
        dist2 = np.sum((x - center) ** 2, axis=1)
        for ri, rr in enumerate(r2):
            counts[ri, start:stop] += dist2 <= rr
        pos = burn_fine
        for k in range(1, steps):
            for _ in range(m_sub):
                x = x + model.b(x) * delta + sq * noise[:, pos, :]
                pos += 1
            if np.max(np.sum(x * x, axis=1)) > blowup**2:
                raise RuntimeError("trajectory diverged in MC ensemble")
            dist2 = np.sum((x - center) ** 2, axis=1)
            for ri, rr in enumerate(r2):
                if k < horizons[ri]:
                    counts[ri, start:stop] += dist2 <= rr
    return counts


def visit_counts(
    model: DriftModel,
    center: np.ndarray,
    radii: list[float],
    horizons: list[int],
    sampling: SamplingPlan,
    trials: int,
    part: int = 0,
) -> np.ndarray:
    center = np.atleast_1d(np.asarray(center, float))
    radii_arr = np.asarray(radii, float)
    hor = np.asarray(horizons, int)
    if model.linear_ou:
        return _ou_visit_counts(
            model.d, center, radii_arr, hor, sampling.h, trials,
            sampling.seed, part,
        )
    return _em_visit_counts(
        model, center, radii_arr, hor, sampling.h, sampling.m_sub, trials,
        sampling.seed, part,
    )


@dataclass(frozen=True)
class EvlEstimate:
    p_hat: float
    stderr: float
    survivors: int
    trials: int


def evl_estimate(
    model: DriftModel,
    plan: ThresholdPlan,
    sampling: SamplingPlan,
    trials: int,
    part: int = 0,
) -> EvlEstimate:
    """Fraction of stationary-start trajectories avoiding B(x0, r) at all
    sample times t_0..t_{n-1}."""
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    counts = visit_counts(
        model, plan.center, [plan.radius], [plan.n], sampling, trials, part
    )[0]
    survivors = int(np.sum(counts == 0))
    p = survivors / trials
    return EvlEstimate(p, float(np.sqrt(p * (1.0 - p) / trials)), survivors, trials)


@dataclass(frozen=True)
class VisitCountHistogram:
    tau: float
    counts: np.ndarray  # counts[k] = number of trials with k visits
    trials: int

    def __post_init__(self) -> None:
        if int(np.sum(self.counts)) != self.trials:
            raise ValueError("histogram total != trials")

    def mean(self) -> float:
        k = np.arange(len(self.counts))
        return float(np.sum(k * self.counts) / self.trials)

    def variance(self) -> float:
        k = np.arange(len(self.counts))
        m = self.mean()
        return float(np.sum((k - m) ** 2 * self.counts) / (self.trials - 1))


def poisson_counts(
    model: DriftModel,
    plan: ThresholdPlan,
    sampling: SamplingPlan,
    trials: int,
    part: int = 0,
) -> VisitCountHistogram:
    """Histogram of visit counts over the horizon floor(tau/mu(B_n)) + 1
    samples (summation indices 0..floor(tau/mu) inclusive)."""
    horizon = int(np.floor(plan.tau / plan.mu_ball)) + 1
    counts = visit_counts(
        model, plan.center, [plan.radius], [horizon], sampling, trials, part
    )[0]
    hist = np.bincount(counts)
    return VisitCountHistogram(plan.tau, hist, trials)


@dataclass(frozen=True)
class GofResult:
    chi2: float
    dof: int
    p_value: float
    bins: int


class GofError(ValueError):
    pass


def poisson_gof(hist: VisitCountHistogram, min_expected: float = 5.0) -> GofResult:
    """Pearson chi-square against Poisson(tau) with the right tail merged so
    every expected bin count is >= min_expected."""
    tau, trials = hist.tau, hist.trials
    kmax = len(hist.counts) - 1
    cut = kmax + 1
    while cut > 0 and trials * stats.poisson.sf(cut - 1, tau) < min_expected:
        cut -= 1
    # bins 0..cut-1 individually, >= cut merged
    if cut < 1:
        raise GofError("too few trials for any valid bin")
    expected = trials * stats.poisson.pmf(np.arange(cut), tau)
    if np.any(expected < min_expected):
        raise GofError("expected bin counts below threshold; need more trials")
    observed = np.array(
        [hist.counts[k] if k <= kmax else 0 for k in range(cut)], dtype=float
    )
    tail_obs = trials - observed.sum()
    tail_exp = trials * stats.poisson.sf(cut - 1, tau)
    obs = np.append(observed, tail_obs)
    exp = np.append(expected, tail_exp)
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(obs) - 1
    return GofResult(chi2, dof, float(stats.chi2.sf(chi2, dof)), len(obs))


@dataclass(frozen=True)
class RefineRow:
    factor: int
    p_hat: float
    stderr: float
    target: float


def time_refinement_experiment(
    model: DriftModel,
    plan: ThresholdPlan,
    sampling: SamplingPlan,
    factors: list[int],
    trials: int,
) -> list[RefineRow]:
    """Resample the same [0, n h] horizon at step h/M: with the same
    threshold, (nM) mu(B) -> tau M and the survival drops to e^{-tau M}."""
    rows = []
    for part, m_factor in enumerate(factors):
        if m_factor < 1:
            raise ValueError("refinement factors must be >= 1")
        fine = SamplingPlan(
            h=sampling.h / m_factor,
            n=plan.n * m_factor,
            m_sub=sampling.m_sub,
            seed=sampling.seed,
            trajectories=sampling.trajectories,
        )
        counts = visit_counts(
            model, plan.center, [plan.radius], [plan.n * m_factor], fine,
            trials, part,
        )[0]
        p = float(np.sum(counts == 0)) / trials
        rows.append(
            RefineRow(
                factor=m_factor,
                p_hat=p,
                stderr=float(np.sqrt(p * (1.0 - p) / trials)),
                target=float(np.exp(-plan.tau * m_factor)),
            )
        )
    return rows


@dataclass(frozen=True)
class NoiseSpec:
    """Block-noise law: delta (W = 0), uniform(width), or gaussian(sigma)."""

    kind: str
    width: float = 1.0
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("delta", "uniform", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "uniform" and self.width <= 0:
            raise ValueError("uniform width must be > 0")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ValueError("gaussian sigma must be > 0")

    def ball_prob(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """P(W in [lo, hi]) elementwise."""
        if self.kind == "delta":
            return ((lo <= 0.0) & (0.0 <= hi)).astype(float)
        if self.kind == "uniform":
            a = -self.width / 2.0
            return (np.clip(hi, a, -a) - np.clip(lo, a, -a)) / self.width
        return stats.norm.cdf(hi / self.sigma) - stats.norm.cdf(lo / self.sigma)


def _convolved_ball_mass(noise: NoiseSpec, r: float, quad_pts: int = 4001) -> float:
    """(mu * nu)([-r, r]) for mu = N(0,1) by quadrature on a fine 1-d grid."""
    if noise.kind == "delta":
        return float(stats.norm.cdf(r) - stats.norm.cdf(-r))
    span = 8.0 + 6.0 * (noise.sigma if noise.kind == "gaussian" else noise.width)
    xs = np.linspace(-span, span, quad_pts)
    probs = noise.ball_prob(-r - xs, r - xs)
    return float(np.trapezoid(probs * stats.norm.pdf(xs), xs))


@dataclass(frozen=True)
class BlocksResult:
    p_hat: float
    stderr: float
    target: float
    radius: float
    diffuse: bool


def block_sequence_experiment(
    block_len: int,
    noise: NoiseSpec,
    n: int,
    tau: float,
    trials: int,
    master_seed: int,
    part: int = 0,
    batch: int = DEFAULT_BATCH,
) -> BlocksResult:
    """Y_{(k-1)M+i} = X_k + W_{(k-1)M+i} with X iid N(0,1), W iid nu.

    Calibration: nM (mu*nu)(B) = tau.  Diffuse nu gives survival e^{-tau};
    the delta case degenerates to e^{-tau/M}.
    """
    if block_len < 1:
        raise ValueError("block length must be >= 1")
    total = n * block_len
    target_mass = tau / total
    r = optimize.brentq(
        lambda rr: _convolved_ball_mass(noise, rr) - target_mass,
        1e-12, 10.0, rtol=CALIBRATION_RTOL,
    )
    survivors = 0
    for start in range(0, trials, batch):
        stop = min(start + batch, trials)
        nb = stop - start
        hits = np.zeros(nb, dtype=bool)
        for i in range(nb):
            g = trajectory_stream(master_seed, start + i, part)
            x = g.standard_normal(n)
            if noise.kind == "delta":
                y = x
                hits[i] = bool(np.any(np.abs(y) <= r))
                continue
            if noise.kind == "uniform":
                w = g.uniform(-noise.width / 2.0, noise.width / 2.0,
                              size=(n, block_len))
            else:
                w = noise.sigma * g.standard_normal((n, block_len))
            y = x[:, None] + w
            hits[i] = bool(np.any(np.abs(y) <= r))
        survivors += int(np.sum(~hits))
    p = survivors / trials
    diffuse = noise.kind != "delta"
    target = float(np.exp(-tau)) if diffuse else float(np.exp(-tau / block_len))
    return BlocksResult(
        p_hat=p,
        stderr=float(np.sqrt(p * (1.0 - p) / trials)),
        target=target,
        radius=float(r),
        diffuse=diffuse,
    )


def block_survival_quadrature(
    noise: NoiseSpec, block_len: int, r: float, n: int
) -> float:
    """Oracle: [ integral (1 - nu(B - x))^M mu(dx) ]^n by quadrature."""
    def integrand(x):
        p = noise.ball_prob(np.array([-r - x]), np.array([r - x]))[0]
        return (1.0 - p) ** block_len * stats.norm.pdf(x)

    val, _ = integrate.quad(integrand, -12, 12, limit=400)
    return float(val**n)
