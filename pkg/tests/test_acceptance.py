"""Acceptance suite: one test per criterion, each reported as PASS/FAIL in the
terminal summary. Criteria 4-6 share one identification and one benchmark run
per seed through session fixtures."""
import dataclasses
import time

import numpy as np
import pytest

from esnmpc.config import ExperimentConfig
from esnmpc.experiment import bench, excite, identify
from esnmpc.ident import (ReadoutWeights, RegressorMatrix, free_run, lambda_max,
                          lasso_objective, train_lasso, train_ls)
from esnmpc.mpc import (Controller, ControllerState, EsnPlant, EsnPredictor,
                        MpcConfig, objective, run_closed_loop)
from esnmpc.reduce import observable_closure, prune
from esnmpc.reservoir import EsnState, certify, generate_reservoir, simulate
from builders import blocked_network, equilibrium, small_esn
from oracles import lasso_fista

SEEDS = range(5)


@pytest.fixture(scope="session")
def pipeline():
    """Excitation and identification with the default configuration, per seed."""
    t0 = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        cfg = ExperimentConfig(seed=seed)
        train, valid = excite(cfg)
        runs[seed] = (cfg, identify(cfg, train, valid))
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="session")
def benches(pipeline):
    """Full least-squares and reduced retrained networks on the scenario, per seed."""
    runs, _ = pipeline
    t0 = time.perf_counter()
    out = {seed: bench(cfg, res.models["1"], res.models["2full"])
           for seed, (cfg, res) in runs.items()}
    return out, time.perf_counter() - t0


@pytest.mark.criterion("1 delta-GAS contraction")
def test_contraction(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, checked = -np.inf, 0
    for target in (0.5, 0.9, 0.99):
        for i in range(100):
            n = int(rng.integers(5, 60))
            w = generate_reservoir(n, float(rng.uniform(0.05, 1.0)),
                                   seed=int(rng.integers(1 << 30)), target=target)
            alpha = certify(w).alpha
            assert alpha == pytest.approx(target, rel=1e-9)
            steps = 300
            scale = rng.uniform(0.1, 5.0)
            u, y = rng.normal(0, scale, steps), rng.normal(0, scale, steps)
            xa = simulate(w, rng.uniform(-1, 1, n), u, y)
            xb = simulate(w, rng.uniform(-1, 1, n), u, y)
            gap = np.linalg.norm(xa - xb, axis=1)
            bound = alpha ** np.arange(steps + 1) * gap[0]
            live = bound > 0
            ratio = gap[live] / bound[live]
            worst = max(worst, float(ratio.max()))
            checked += steps
            assert np.all(gap <= bound * (1 + 1e-12)), (target, i, ratio.max())
    elapsed = time.perf_counter() - t0
    criterion(f"300 reservoirs, {checked} steps, max gap/bound {worst:.6f}, "
              f"{elapsed:.1f} s")
    assert elapsed < 10


@pytest.mark.criterion("2 LASSO correctness")
def test_lasso(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_obj = worst_ls = 0.0
    for _ in range(50):
        cols = int(rng.integers(1, 9))
        rows = int(rng.integers(cols + 2, 60))
        r = RegressorMatrix(rng.normal(size=(rows, cols)), rng.normal(size=rows))
        lmax = lambda_max(r)
        lam = float(rng.uniform(0.001, 1.0)) * lmax
        ours = lasso_objective(r, train_lasso(r, lam).vector, lam)
        ref = lasso_objective(r, lasso_fista(r.phi, r.y_target, lam), lam)
        worst_obj = max(worst_obj, abs(ours - ref))
        assert abs(ours - ref) <= 1e-6

        w0 = train_lasso(r, 0.0).vector
        w_ls = train_ls(r).vector
        worst_ls = max(worst_ls, float(np.max(np.abs(w0 - w_ls))))
        assert np.max(np.abs(w0 - w_ls)) <= 1e-6

        for f in (1.0, 1.5, 10.0):
            assert not train_lasso(r, f * lmax).vector.any()
    elapsed = time.perf_counter() - t0
    criterion(f"objective gap {worst_obj:.1e}, lambda=0 vs LS {worst_ls:.1e}, "
              f"{elapsed:.1f} s")
    assert elapsed < 30


@pytest.mark.criterion("3 reduction soundness")
def test_reduction(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst, nets = 0.0, 0
    cases = [blocked_network(s, int(rng.integers(1, 12)), int(rng.integers(1, 12)))
             for s in range(20)]
    # sparse reservoirs with a sparse readout prune down to a strict subset
    for s in range(10):
        w = generate_reservoir(300, 0.004, seed=s)
        w1 = np.zeros(300)
        w1[rng.choice(300, 5, replace=False)] = rng.normal(size=5)
        cases.append((w, ReadoutWeights(w1, float(rng.normal())), None))
    for w, rw, _ in cases:
        keep = observable_closure(w, rw)
        w2, rw2 = prune(w, rw, keep)
        assert w2.n < w.n
        for kind in ("uniform", "steps", "large"):
            if kind == "uniform":
                u = rng.uniform(-1, 1, 1000)
            elif kind == "steps":
                u = np.repeat(rng.uniform(-2, 2, 50), 20)
            else:
                u = rng.normal(0, 50, 1000)
            x0 = rng.uniform(-1, 1, w.n)
            u0 = float(rng.normal())
            a = free_run(w, rw, u, EsnState(x0, u0))
            b = free_run(w2, rw2, u, EsnState(x0[keep], u0))
            worst = max(worst, float(np.max(np.abs(a - b))))
            assert np.max(np.abs(a - b)) <= 1e-12
        nets += 1
    elapsed = time.perf_counter() - t0
    criterion(f"{nets} networks x 3 input families, max |dy| {worst:.1e}, {elapsed:.1f} s")
    assert elapsed < 5


@pytest.mark.criterion("4 identification pipeline")
def test_pipeline(pipeline, criterion):
    runs, elapsed = pipeline
    rows = []
    for seed, (cfg, res) in runs.items():
        f = res.fittings
        n1, n2 = res.models["1"].n, res.models["2full"].n
        reduction = 100.0 * (1 - n2 / n1)
        rows.append(f"seed {seed}: alg1 {f['1']:.1f}% 2full {f['2full']:.1f}% "
                    f"n {n1}->{n2} ({reduction:.0f}%) 2b {f['2b']:.1f}%")
        print(rows[-1])
    for seed, (cfg, res) in runs.items():
        f = res.fittings
        n1, n2 = res.models["1"].n, res.models["2full"].n
        assert cfg.reservoir.n == 300
        assert f["1"] >= 70, seed
        assert n2 <= 0.75 * n1, seed
        assert f["2full"] >= f["1"] - 8, seed
        assert f["2b"] < f["1"] and f["2b"] < f["2full"], seed
    fits = np.array([[res.fittings[v] for v in ("1", "2full", "2b")]
                     for _, res in runs.values()])
    red = np.mean([100 * (1 - res.models["2full"].n / res.models["1"].n)
                   for _, res in runs.values()])
    criterion(f"{len(runs)} seeds, min fitting alg1 {fits[:, 0].min():.1f}% "
              f"2full {fits[:, 1].min():.1f}%, max 2b {fits[:, 2].max():.1f}%, "
              f"mean reduction {red:.0f}%, {elapsed:.0f} s")
    assert elapsed < 15 * 60


@pytest.mark.criterion("5 offset-free tracking on the pH scenario")
def test_scenario(benches, criterion):
    results, elapsed = benches
    worst = 0.0
    for seed, b in results.items():
        for tag, sr in (("reduced", b.reduced), ("full", b.full)):
            print(f"seed {seed} {tag}\n{sr.summary()}")
            errs = [s["ss_error"] for s in sr.segments]
            worst = max(worst, max(errs))
            assert len(sr.segments) == 8
            assert max(errs) < 0.02, (seed, tag, errs)
            assert sr.u_in_bounds
            u = np.array([r.u for r in sr.records])
            assert u.min() >= 12.7 and u.max() <= 16.7
    criterion(f"{2 * len(results)} runs, worst end-of-segment |e| {worst:.1e}, "
              f"{elapsed / len(results):.0f} s per seed for both networks")
    assert elapsed / len(results) < 10 * 60


@pytest.mark.criterion("6 solve-time ordering")
def test_timing(benches, criterion):
    results, _ = benches
    cuts = []
    for seed, b in results.items():
        print(f"seed {seed}\n{b.summary()}")
        cuts.append(b.mean_reduction)
        assert b.reduced.mean_solve < b.full.mean_solve, seed
    criterion(f"mean solve-time reduction {np.mean(cuts):.0f}% "
              f"(per seed {', '.join(f'{c:.0f}' for c in cuts)}; target 15%)")


@pytest.mark.criterion("7 MPC gradient check")
def test_gradient(criterion):
    t0 = time.perf_counter()
    model = small_esn(11, n=300, density=0.004)
    p = EsnPredictor(model)
    cfg = MpcConfig()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-1, 1, model.n)
        st = ControllerState(x, rng.uniform(12.7, 16.7), rng.normal(0, 0.3))
        du = rng.normal(0, 0.5, cfg.horizon)
        ref = rng.uniform(6, 8.5)
        g = objective(model, st, du, cfg, ref)[1]
        fd = np.empty_like(g)
        h = 1e-6
        for i in range(du.size):
            e = np.zeros(du.size)
            e[i] = h
            fd[i] = (objective(model, st, du + e, cfg, ref, gradient=False)[0]
                     - objective(model, st, du - e, cfg, ref, gradient=False)[0]) / (2 * h)
        rel = np.linalg.norm(g - fd) / np.linalg.norm(g)
        worst = max(worst, rel)
        assert rel <= 1e-5
    assert p.initial_state(14.0, 7.0).shape == (300,)
    elapsed = time.perf_counter() - t0
    criterion(f"100 points, n=300, N={cfg.horizon}, worst relative error {worst:.1e}, "
              f"{elapsed:.1f} s")
    assert elapsed < 10


@pytest.mark.criterion("8 offset-free synthetic plant")
def test_synthetic_offset(criterion):
    t0 = time.perf_counter()
    model = small_esn(12, n=300, density=0.004)
    u0, u_target = 14.5, 15.5
    x, y0 = equilibrium(model, u0)
    y_target = equilibrium(model, u_target)[1]
    worst = 0.0
    for mode in ("predicted", "measured"):
        cfg = dataclasses.replace(MpcConfig(), state_update=mode)
        for c in (-0.5, 0.1, 1.0):
            ref = y_target + c
            plant = EsnPlant(model, x, u0, bias=c)
            ctrl = Controller(model, cfg, u0, y0 + c, x0=x)
            recs = run_closed_loop(ctrl, plant, ref, 150)
            tail = max(abs(r.y_sys - ref) for r in recs[-20:])
            worst = max(worst, tail)
            assert tail < 1e-6, (mode, c, tail)
    elapsed = time.perf_counter() - t0
    criterion(f"c in {{-0.5, 0.1, 1.0}}, both state updates, worst settled |e| "
              f"{worst:.1e}, {elapsed:.1f} s")
    assert elapsed < 60
