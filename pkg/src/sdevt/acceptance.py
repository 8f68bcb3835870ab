"""End-to-end acceptance suite: one runnable criterion per release gate.

Each criterion returns a CriterionResult with a one-line verdict; the CLI
`all` subcommand and the pytest acceptance module both drive this code.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import evt, sde, spaces, transfer
from .experiments import ExperimentConfig, ExperimentResult, GridCfg, SamplingCfg, run

DEFAULT_SEED = 20260809


@dataclass
class CriterionResult:
    index: int
    title: str
    passed: bool
    details: list[str] = field(default_factory=list)
    elapsed_s: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        tail = f" [{'; '.join(self.details)}]" if self.details else ""
        return f"criterion {self.index:2d} ({self.title}): {verdict}{tail}"


def _records_by_prefix(result: ExperimentResult, prefix: str):
    return [r for r in result.records if r.name.startswith(prefix)]


class AcceptanceSuite:
    """Runs the acceptance criteria with shared, cached sub-results."""

    def __init__(self, seed: int = DEFAULT_SEED, out_dir: str | None = None):
        self.seed = seed
        self.out_dir = out_dir

    def _sampling(self, h: float = 0.5, n: int = 2000, trials: int = 20_000) -> SamplingCfg:
        return SamplingCfg(step=h, samples=n, trials=trials, seed=self.seed)

    @cached_property
    def evl_result(self) -> ExperimentResult:
        cfg = ExperimentConfig(
            kind="evl", taus=[0.5, 1.0, 2.0], sampling=self._sampling(),
            out_dir=self.out_dir, experiment_id="acceptance-evl",
        )
        return run(cfg)

    @cached_property
    def evl_by_h(self) -> list[ExperimentResult]:
        out = []
        for h in (0.25, 0.5, 1.0):
            cfg = ExperimentConfig(
                kind="evl", taus=[1.0], sampling=self._sampling(h=h),
                out_dir=self.out_dir, experiment_id=f"acceptance-evl-h{h:g}",
            )
            out.append(run(cfg))
        return out

    @cached_property
    def poisson_result(self) -> ExperimentResult:
        cfg = ExperimentConfig(
            kind="poisson", taus=[0.5, 1.0, 2.0], sampling=self._sampling(),
            out_dir=self.out_dir, experiment_id="acceptance-poisson",
        )
        return run(cfg)

    @cached_property
    def spectrum_result(self) -> ExperimentResult:
        cfg = ExperimentConfig(
            kind="spectrum", grid=GridCfg(half_width=6.0, cells=512),
            hole_radii=[0.1, 0.05, 0.025],
            twist_angles=[math.pi / 2, math.pi],
            sampling=self._sampling(),
            out_dir=self.out_dir, experiment_id="acceptance-spectrum",
        )
        start = time.perf_counter()
        result = run(cfg)
        self._spectrum_elapsed = time.perf_counter() - start
        return result

    @cached_property
    def kl_result(self) -> ExperimentResult:
        cfg = ExperimentConfig(
            kind="kl", grid=GridCfg(half_width=6.0, cells=512),
            hole_radii=[0.1, 0.05, 0.025], k_max=20,
            sampling=self._sampling(),
            out_dir=self.out_dir, experiment_id="acceptance-kl",
        )
        return run(cfg)

    @cached_property
    def operator_context(self):
        model = sde.make_model("ou")
        grid = spaces.GridSpec(1, 6.0, 512)
        matrix = transfer.build_transfer_matrix(model, 0.5, grid)
        f0 = transfer.invariant_density(matrix).eigenfunction
        return model, grid, matrix, f0

    # --- criteria -------------------------------------------------------

    def criterion_1(self) -> CriterionResult:
        start = time.perf_counter()
        result = self.evl_result
        elapsed = time.perf_counter() - start
        recs = _records_by_prefix(result, "evl tau=")
        details = [f"{r.name}: {r.value:.4f} vs {r.target:.4f}" for r in recs]
        ok = all(r.passed for r in recs) and len(recs) == 3
        if elapsed > 120.0:
            ok = False
            details.append(f"runtime {elapsed:.0f}s > 120s")
        return CriterionResult(1, "survival law e^-tau", ok, details, elapsed)

    def criterion_2(self) -> CriterionResult:
        start = time.perf_counter()
        runs = self.evl_by_h
        vals = []
        for res in runs:
            rec = _records_by_prefix(res, "evl tau=")[0]
            p = rec.value
            trials = res.config.sampling.trials
            vals.append((res.config.sampling.step, p, math.sqrt(p * (1 - p) / trials)))
        ok = True
        details = []
        for i in range(len(vals)):
            for j in range(i + 1, len(vals)):
                hi, pi, si = vals[i]
                hj, pj, sj = vals[j]
                lim = 3.0 * math.hypot(si, sj)
                good = abs(pi - pj) <= lim
                ok = ok and good
                details.append(f"|p(h={hi:g})-p(h={hj:g})|={abs(pi-pj):.4f}<={lim:.4f}")
        return CriterionResult(2, "step-size independence", ok, details,
                               time.perf_counter() - start)

    def criterion_3(self) -> CriterionResult:
        start = time.perf_counter()
        result = self.poisson_result
        elapsed = time.perf_counter() - start
        means = _records_by_prefix(result, "poisson mean")
        gofs = _records_by_prefix(result, "poisson gof")
        ok = all(r.passed for r in means + gofs) and len(gofs) == 3
        details = [f"{r.name}: {r.value:.4f}" for r in means + gofs]
        if elapsed > 300.0:
            ok = False
            details.append(f"runtime {elapsed:.0f}s > 300s")
        return CriterionResult(3, "Poisson visit counts", ok, details, elapsed)

    def criterion_4(self) -> CriterionResult:
        start = time.perf_counter()
        result = self.spectrum_result
        recs = _records_by_prefix(result, "eigen ratio")
        ok = all(r.passed for r in recs) and len(recs) == 4  # 3 ratios + monotone
        details = [f"{r.name}: {r.value:.4f}" for r in recs]
        elapsed = getattr(self, "_spectrum_elapsed", time.perf_counter() - start)
        if elapsed > 60.0:
            ok = False
            details.append(f"runtime {elapsed:.0f}s > 60s")
        return CriterionResult(4, "hole eigenvalue expansion", ok, details, elapsed)

    def criterion_5(self) -> CriterionResult:
        start = time.perf_counter()
        result = self.kl_result
        recs = result.records
        ok = all(r.passed for r in recs)
        details = [f"{r.name}: {r.value:.4f} ({'ok' if r.passed else 'FAIL'})"
                   for r in recs]
        return CriterionResult(5, "return-rate coefficients", ok, details,
                               time.perf_counter() - start)

    def criterion_6(self) -> CriterionResult:
        start = time.perf_counter()
        model, grid, matrix, f0 = self.operator_context
        hole = transfer.HoleSpec(np.array([0.0]), grid.cell_width)
        mu = transfer.hole_measure(f0, hole)
        n = int(round(1.0 / mu))
        op = transfer.evl_via_operator(transfer.apply_hole(matrix, hole), f0, n)
        plan = evt.ThresholdPlan(tau=n * mu, center=np.array([0.0]), n=n,
                                 radius=grid.cell_width, mu_ball=mu)
        sampling = sde.SamplingPlan(h=0.5, n=n, seed=self.seed)
        est = evt.evl_estimate(model, plan, sampling, 20_000, part=6)
        window = 3.0 * est.stderr + 0.02
        ok = abs(op - est.p_hat) <= window
        details = [f"operator {op:.4f} vs MC {est.p_hat:.4f} (window {window:.4f})"]
        return CriterionResult(6, "operator vs Monte Carlo survival", ok, details,
                               time.perf_counter() - start)

    def criterion_7(self) -> CriterionResult:
        start = time.perf_counter()
        model = sde.make_model("ou")
        ok = True
        details = []
        for part, (t, steps) in enumerate(((0.5, 1), (1.0, 2), (5.0, 10))):
            ens = sde.ou_endpoint_ensemble(1, 100_000, steps, 0.5,
                                           self.seed + 7, part=part)
            rep = sde.second_moment_check(model, ens, t, 0.0)
            ok = ok and rep.passed
            details.append(f"t={t:g}: {rep.lhs:.4f}<= {rep.bound:.4f}")
            if t == 5.0:
                rel = abs(rep.lhs - rep.bound) / rep.bound
                ok = ok and rel <= 0.02
                details.append(f"t=5 equality gap {rel:.4f}<=0.02")
        return CriterionResult(7, "second-moment contraction bound", ok, details,
                               time.perf_counter() - start)

    def criterion_8(self) -> CriterionResult:
        start = time.perf_counter()
        result = self.spectrum_result
        recs = [r for r in result.records if r.name in ("f0 L1 error", "f0 min")]
        ok = all(r.passed for r in recs) and len(recs) == 2
        details = [f"{r.name}: {r.value:.3e}" for r in recs]
        return CriterionResult(8, "invariant density accuracy and positivity",
                               ok, details, time.perf_counter() - start)

    def criterion_9(self) -> CriterionResult:
        start = time.perf_counter()
        cfg = ExperimentConfig(
            kind="ly_fit", grid=GridCfg(half_width=6.0, cells=512),
            hole_radii=[0.1, 0.05], sampling=self._sampling(),
            out_dir=self.out_dir, experiment_id="acceptance-ly",
        )
        result = run(cfg)
        ok = result.all_passed
        details = [f"{r.name}: {r.value:.4g}" for r in result.records]
        return CriterionResult(9, "norm-contraction fits", ok, details,
                               time.perf_counter() - start)

    def criterion_10(self) -> CriterionResult:
        start = time.perf_counter()
        result = self.spectrum_result
        recs = _records_by_prefix(result, "twist err")
        ok = all(r.passed for r in recs) and len(recs) == 2
        details = [f"{r.name}: {r.value:.3e} <= {r.tolerance:.3e}" for r in recs]
        return CriterionResult(10, "phase-twisted eigenvalue expansion", ok,
                               details, time.perf_counter() - start)

    def criterion_11(self) -> CriterionResult:
        start = time.perf_counter()
        cfg = ExperimentConfig(
            kind="refine", taus=[1.0], refine_factors=[1, 2, 4],
            sampling=self._sampling(), out_dir=self.out_dir,
            experiment_id="acceptance-refine",
        )
        result = run(cfg)
        ok = result.all_passed
        details = [f"{r.name}: {r.value:.4f} vs {r.target:.4f}"
                   for r in result.records]
        return CriterionResult(11, "time-refinement decay", ok, details,
                               time.perf_counter() - start)

    def criterion_12(self) -> CriterionResult:
        start = time.perf_counter()
        cfg = ExperimentConfig(
            kind="blocks", taus=[1.0], block_len=4,
            sampling=self._sampling(h=0.5, n=2000),
            out_dir=self.out_dir, experiment_id="acceptance-blocks",
        )
        result = run(cfg)
        ok = result.all_passed
        details = [f"{r.name}: {r.value:.4f} vs {r.target:.4f}"
                   for r in result.records]
        return CriterionResult(12, "block-sequence limits", ok, details,
                               time.perf_counter() - start)

    def criterion_13(self) -> CriterionResult:
        start = time.perf_counter()
        cfg = ExperimentConfig(
            kind="norms", grid=GridCfg(half_width=6.0, cells=512),
            sampling=self._sampling(), out_dir=self.out_dir,
            experiment_id="acceptance-norms",
        )
        norms_result = run(cfg)
        details = [f"{r.name}: ok" if r.passed else f"{r.name}: FAIL"
                   for r in norms_result.records]
        ok = norms_result.all_passed
        dual = [r for r in self.spectrum_result.records if r.name == "duality rel err"]
        ok = ok and dual and dual[0].passed
        details.append(f"duality rel err {dual[0].value:.2e}")
        small = ExperimentConfig(
            kind="evl", taus=[1.0],
            sampling=SamplingCfg(step=0.5, samples=200, trials=2000, seed=self.seed),
        )
        r1 = run(small).model_dump()
        r2 = run(small).model_dump()
        r1.pop("wall_time_s")
        r2.pop("wall_time_s")
        deterministic = r1 == r2
        ok = ok and deterministic
        details.append("rerun byte-identical" if deterministic else "rerun differs")
        return CriterionResult(13, "exact property suite", ok, details,
                               time.perf_counter() - start)

    def all_criteria(self) -> list[CriterionResult]:
        return [getattr(self, f"criterion_{i}")() for i in range(1, 14)]


def run_acceptance_suite(
    out_dir: str | None = None,
    seed: int | None = None,
    emit=print,
) -> bool:
    suite = AcceptanceSuite(seed=seed or DEFAULT_SEED, out_dir=out_dir)
    all_ok = True
    for res in suite.all_criteria():
        emit(res.line())
        all_ok = all_ok and res.passed
    emit(f"acceptance suite: {'ALL PASS' if all_ok else 'FAILURES PRESENT'}")
    return all_ok
