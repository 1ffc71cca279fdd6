"""End-to-end pH case study: excite, identify, reduce, control, benchmark."""
from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ident
from .config import ExperimentConfig
from .ident import (Dataset, EsnModel, LassoNotConverged, Scaling, collect,
                    default_washout, lambda_max, train_lasso, train_ls)
from .mpc import Controller, LogRecord, MpcConfig
from .plant import (MprsConfig, PhPlant, PhProcess, StepSchedule,
                    disturbance_schedule, generate_mprs, simulate_open_loop)
from .reduce import ReductionReport, reduce_and_retrain
from .reservoir import generate_reservoir

log = logging.getLogger(__name__)

VARIANTS = {
    "1": "1",
    "2a": "2 (step 1)",
    "2b": "2 (step 1-2)",
    "2full": "2 full",
}


class ExperimentError(RuntimeError):
    pass


def excite(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Open-loop MPRS runs of the pH plant: independent training and validation draws."""
    ex = cfg.excitation
    out = []
    for seed in (cfg.train_seed, cfg.valid_seed):
        mprs = MprsConfig(tuple(ex.levels), ex.fast_period, ex.slow_period, ex.mix,
                          seed, ex.duration, cfg.t_s)
        u = generate_mprs(mprs)
        if u.size == 0:
            raise ExperimentError("excitation duration yields an empty dataset")
        y = simulate_open_loop(PhPlant.steady(ex.u0), u, cfg.t_s)
        out.append(Dataset(u, y, cfg.t_s))
    return out[0], out[1]


@dataclass
class LambdaSweep:
    lam: float
    lambdas: list = field(default_factory=list)
    fittings: list = field(default_factory=list)
    supports: list = field(default_factory=list)


@dataclass
class IdentResult:
    models: dict
    fittings: dict
    sweep: Optional[LambdaSweep] = None
    report: Optional[ReductionReport] = None

    def table(self) -> str:
        return format_table([(VARIANTS[v], self.models[v].n, self.fittings[v])
                             for v in VARIANTS if v in self.models])


def format_table(rows) -> str:
    lines = [f"{'Algorithm':<14} {'Number of states n':>18} {'Fitting':>10}"]
    for name, n, fit in rows:
        lines.append(f"{name:<14} {n:>18d} {fit:>9.2f}%")
    return "\n".join(lines)


def build_reservoir(cfg: ExperimentConfig):
    rs = cfg.reservoir
    return generate_reservoir(rs.n, rs.density, cfg.reservoir_seed, rs.target, rs.mode)


def washout_for(cfg: ExperimentConfig, w) -> int:
    k0 = cfg.training.washout
    return default_washout(w) if k0 == "auto" else int(k0)


def select_lambda(cfg: ExperimentConfig, base: EsnModel, r, valid: Dataset,
                  fit_ls: float) -> tuple[float, ident.ReadoutWeights, LambdaSweep]:
    """Largest grid lambda whose validation fitting is within the margin of LS.

    The grid is walked from large to small lambda with warm starts, so the
    first admissible point is the answer.
    """
    tr = cfg.training
    lmax = lambda_max(r)
    grid = lmax * np.logspace(np.log10(tr.lam_grid_high), np.log10(tr.lam_grid_low),
                              tr.lam_grid_points)
    sweep = LambdaSweep(lam=float("nan"))
    w_init = None
    for lam in grid:
        try:
            rw = train_lasso(r, lam, tr.lasso_tol, tr.lasso_max_sweeps, w_init)
        except LassoNotConverged as exc:
            log.warning("skipping lambda=%.3g: %s", lam, exc)
            w_init = exc.weights.vector
            continue
        w_init = rw.vector
        try:
            fit = base.with_readout(rw).validate(valid)
        except (FloatingPointError, ident.IdentError):
            fit = float("-inf")
        if not np.isfinite(fit):
            fit = float("-inf")
        sweep.lambdas.append(float(lam))
        sweep.fittings.append(fit)
        sweep.supports.append(int(rw.support.size))
        log.info("lambda=%.3g support=%d fitting=%.2f", lam, rw.support.size, fit)
        if fit >= fit_ls - tr.margin and rw.support.size > 0:
            sweep.lam = float(lam)
            return float(lam), rw, sweep
    raise ExperimentError("no lambda on the grid reaches the fitting margin")


def identify(cfg: ExperimentConfig, train: Dataset, valid: Dataset,
             variants=("1", "2a", "2b", "2full")) -> IdentResult:
    """Train the Table-1 variants on one reservoir draw.

    Requesting only ``"1"`` skips the LASSO stage; anything else runs the
    whole pipeline.
    """
    w = build_reservoir(cfg)
    k0 = washout_for(cfg, w)
    train = Dataset(train.u, train.y, train.t_s, k0)
    valid = Dataset(valid.u, valid.y, valid.t_s, k0)
    scaling = Scaling.from_range(train.u, train.y)
    r = collect(w, train, scaling=scaling)

    models, fits = {}, {}
    alg1 = EsnModel(w, train_ls(r, cfg.training.ls_rcond), scaling, k0, "1")
    fit1 = alg1.validate(valid)
    models["1"], fits["1"] = alg1, fit1
    if set(variants) <= {"1"}:
        return IdentResult(models, fits)

    if cfg.training.lam is not None:
        lam = float(cfg.training.lam)
        rw = train_lasso(r, lam, cfg.training.lasso_tol, cfg.training.lasso_max_sweeps)
        sweep = None
    else:
        lam, rw, sweep = select_lambda(cfg, alg1, r, valid, fit1)
    lasso = alg1.with_readout(rw, label="2a")
    models["2a"], fits["2a"] = lasso, lasso.validate(valid)

    pruned, retrained, report = reduce_and_retrain(lasso, train, valid,
                                                   cfg.training.ls_rcond)
    models["2b"] = pruned.with_readout(pruned.readout, label="2b")
    models["2full"] = retrained.with_readout(retrained.readout, label="2full")
    fits["2b"] = report.fitting_after_prune
    fits["2full"] = report.fitting_after_retrain
    # intermediate variants come for free, so all of them are returned
    return IdentResult(models, fits, sweep, report)


# -- closed loop -------------------------------------------------------------

@dataclass
class ScenarioResult:
    records: list
    segments: list
    mean_solve: float
    median_solve: float
    max_solve: float
    u_in_bounds: bool
    nonconverged: int

    def summary(self) -> str:
        lines = [f"{'segment':>16} {'event':>8} {'settle[s]':>10} {'overshoot':>10} "
                 f"{'ss_error':>10}"]
        for s in self.segments:
            settle = "-" if s["settling_time"] is None else f"{s['settling_time']:.0f}"
            lines.append(
                f"{s['start']:>7.0f}-{s['end']:<8.0f} {s['kind']:>8} {settle:>10} "
                f"{s['overshoot']:>10.4f} {s['ss_error']:>10.2e}")
        lines.append(f"solve time mean {self.mean_solve:.4f} s, median "
                     f"{self.median_solve:.4f} s, max {self.max_solve:.4f} s")
        lines.append(f"non-converged solves: {self.nonconverged}; "
                     f"inputs within bounds: {self.u_in_bounds}")
        return "\n".join(lines)


def reference_schedule(cfg: ExperimentConfig, y0: float) -> StepSchedule:
    sc = cfg.scenario
    return StepSchedule(sc.ref_times, sc.ref_values, y0)


def run_scenario(cfg: ExperimentConfig, model,
                 mpc_cfg: Optional[MpcConfig] = None) -> ScenarioResult:
    """Tracking and disturbance-rejection run on the pH plant."""
    sc = cfg.scenario
    mpc_cfg = cfg.mpc if mpc_cfg is None else mpc_cfg
    plant0 = PhPlant.steady(sc.u0)
    process = PhProcess(plant0, cfg.t_s,
                        disturbance_schedule(sc.dist_times, sc.dist_values,
                                             plant0.q2))
    y0 = process.measure()
    ref = reference_schedule(cfg, y0)
    ctrl = Controller(model, mpc_cfg, sc.u0, y0)
    steps = int(round(sc.duration / cfg.t_s))
    records = [ctrl.step(process, ref(ctrl.t)) for _ in range(steps)]
    return summarize(cfg, records, mpc_cfg)


def summarize(cfg: ExperimentConfig, records: list,
              mpc_cfg: Optional[MpcConfig] = None) -> ScenarioResult:
    mpc_cfg = cfg.mpc if mpc_cfg is None else mpc_cfg
    sc = cfg.scenario
    t = np.array([r.time for r in records])
    y = np.array([r.y_sys for r in records])
    ref = np.array([r.y_ref for r in records])
    u = np.array([r.u for r in records])
    events = sorted([(tt, "ref") for tt in sc.ref_times] +
                    [(tt, "dist") for tt in sc.dist_times])
    bounds = [0.0] + [e[0] for e in events] + [sc.duration]
    kinds = ["start"] + [e[1] for e in events]
    segments = []
    for (start, end), kind in zip(zip(bounds[:-1], bounds[1:]), kinds):
        # the record at time t holds y measured before u(t) is applied and the
        # reference already switched, so segment [start, end) owns it
        mask = (t >= start) & (t < end)
        if not mask.any():
            continue
        e = y[mask] - ref[mask]
        target = ref[mask][-1]
        prev_ref = ref[t < start][-1] if np.any(t < start) else target
        if kind == "ref" and target != prev_ref:
            direction = np.sign(target - prev_ref)
            overshoot = max(0.0, float(np.max(direction * e)))
        else:
            overshoot = float(np.max(np.abs(e)))
        outside = np.flatnonzero(np.abs(e) > sc.settle_band)
        if outside.size == 0:
            settling = 0.0
        elif outside[-1] == e.size - 1:
            settling = None
        else:
            settling = float(t[mask][outside[-1] + 1] - start)
        segments.append({"start": start, "end": end, "kind": kind,
                         "settling_time": settling, "overshoot": overshoot,
                         "ss_error": float(abs(e[-1]))})
    times = [r.solve_time for r in records]
    return ScenarioResult(
        records, segments,
        mean_solve=float(np.mean(times)),
        median_solve=float(statistics.median(times)),
        max_solve=float(np.max(times)),
        u_in_bounds=bool(np.all((u >= mpc_cfg.u_min) & (u <= mpc_cfg.u_max))),
        nonconverged=sum(not r.converged for r in records),
    )


@dataclass
class BenchResult:
    full: ScenarioResult
    reduced: ScenarioResult
    n_full: int
    n_reduced: int

    @property
    def mean_reduction(self) -> float:
        return 100.0 * (1.0 - self.reduced.mean_solve / self.full.mean_solve)

    @property
    def median_reduction(self) -> float:
        return 100.0 * (1.0 - self.reduced.median_solve / self.full.median_solve)

    def summary(self) -> str:
        return "\n".join([
            f"{'network':<10} {'n':>5} {'mean [s]':>10} {'median [s]':>11}",
            f"{'full':<10} {self.n_full:>5d} {self.full.mean_solve:>10.4f} "
            f"{self.full.median_solve:>11.4f}",
            f"{'reduced':<10} {self.n_reduced:>5d} {self.reduced.mean_solve:>10.4f} "
            f"{self.reduced.median_solve:>11.4f}",
            f"mean solve-time reduction {self.mean_reduction:.1f}%, "
            f"median {self.median_reduction:.1f}%",
        ])


def bench(cfg: ExperimentConfig, full: EsnModel, reduced: EsnModel) -> BenchResult:
    """Identical scenario against both networks, run serially for clean timing."""
    return BenchResult(run_scenario(cfg, full), run_scenario(cfg, reduced),
                       full.n, reduced.n)
