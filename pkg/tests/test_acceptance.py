"""Acceptance criteria 1-10; each test prints one PASS/FAIL line and a summary is listed at the end."""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from tireid import cli
from tireid import dynamics as dyn
from tireid import residual as res
from tireid import ssm
from tireid.dynamics import AxlePacejka, TireParams
from tireid.identify import SweepConfig, virtual_sweep
from tireid.optimize import NmOptions, nelder_mead
from tireid.plant import collect_telemetry, make_maneuver
from tireid.vision import FrictionBasis, FrictionPrior, expected_friction, warm_start_D

from _oracles import finite_difference_check, random_model, zoh_oracle

TRUE = TireParams(AxlePacejka(10.0, 1.9, 0.8, 0.97), AxlePacejka(12.0, 1.7, 0.8, 0.95))


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_1_mode_equivalence():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        m = random_model("s4", seed, d_model=16, N=16)
        w = np.column_stack([rng.uniform(5, 25, 64), rng.normal(0, 0.3, 64),
                             rng.normal(0, 0.3, 64), rng.normal(0, 0.1, 64)])
        worst = max(worst, float(np.max(np.abs(res.forward(m, w, "conv") - res.forward(m, w, "recurrent")))))
    took = time.perf_counter() - t0
    verdict(1, worst < 1e-6 and took < 10.0, f"max abs diff {worst:.2e}, {took:.1f} s")


def test_criterion_2_discretization_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        a = complex(-10 ** rng.uniform(-3, 1), rng.uniform(-50, 50))
        delta = 10 ** rng.uniform(-4.99, -0.01)
        core = ssm.SsmCore([a], [1.0], [1.0], 0.0, math.log(delta))
        A_bar, C_bar = ssm.discretize(core)
        e, q = zoh_oracle(a, delta)
        worst = max(worst, abs(A_bar[0] - e), abs(C_bar[0] - q))
    verdict(2, worst < 1e-12, f"max elementwise error {worst:.2e}")


def test_criterion_3_gradient_fidelity():
    rng = np.random.default_rng(3)
    worst = {}
    for kind in res.ARCHS:
        m = random_model(kind, 30, d_model=6, N=6, hidden=6)
        X = np.stack([np.column_stack([rng.uniform(8, 12, 16), rng.normal(0, 0.3, 16),
                                       rng.normal(0, 0.3, 16), rng.normal(0, 0.1, 16)])
                      for _ in range(3)])
        Y = rng.normal(0, 1e-3, (3, 16, 2))
        m.in_mean, m.in_std = X.mean(axis=(0, 1)), X.std(axis=(0, 1))
        for name, err in finite_difference_check(m, X, Y, per_group=50).items():
            worst[f"{kind}.{name}"] = err
    top = max(worst, key=worst.get)
    verdict(3, worst[top] < 1e-4, f"worst group {top} at {worst[top]:.2e}")


def test_criterion_4_clean_recovery(tmp_path):
    cfg = cli.config_from_dict({"plant": {"relaxation_length": 0.0, "noise_std": [0.0, 0.0]}})
    t0 = time.perf_counter()
    out = cli.cmd_pipeline(cfg, tmp_path)
    took = time.perf_counter() - t0
    fitted = TireParams.from_dict(json.loads(out["report"].read_text())["final"])
    fails = []
    for axle in ("front", "rear"):
        f, t = getattr(fitted, axle), getattr(TRUE, axle)
        for name, tol in (("B", 0.10), ("C", 0.10), ("D", 0.03), ("E", 0.10)):
            err = abs(getattr(f, name) - getattr(t, name)) / abs(getattr(t, name))
            if err > tol:
                fails.append(f"{axle}.{name} off {100 * err:.1f}%")
    rmse = (out["metrics"]["fyf_rmse"], out["metrics"]["fyr_rmse"])
    if max(rmse) >= 0.02:
        fails.append("curve rmse")
    ok = not fails and took < 180
    verdict(4, ok, f"rmse {rmse[0]:.2e}/{rmse[1]:.2e}, {took:.0f} s" + (f", {fails}" if fails else ""))


@pytest.fixture(scope="module")
def warm_start_runs(tmp_path_factory):
    runs = {}
    for name, flags in (("no_prior", []), ("prior", ["--mu-prior", "0.8"])):
        d = tmp_path_factory.mktemp(name)
        assert cli.main(["pipeline", "--out", str(d)] + flags) == 0
        runs[name] = json.loads((d / cli.METRICS_FILE).read_text()), \
            json.loads((d / cli.REPORT_FILE).read_text())
    return runs


def test_criterion_5_warm_start_benefit(warm_start_runs):
    (m0, r0), (m1, r1) = warm_start_runs["no_prior"], warm_start_runs["prior"]
    assert r0["initial"]["front"]["D"] == 0.51 and r1["warm_start"]["D_initial"] == 0.8
    fewer = m1["outer_iterations"] < m0["outer_iterations"]
    better = m1["fyf_rmse"] <= m0["fyf_rmse"] and m1["fyr_rmse"] <= m0["fyr_rmse"]
    verdict(5, fewer and better,
            f"outer iterations {m0['outer_iterations']} -> {m1['outer_iterations']}, "
            f"front rmse {m0['fyf_rmse']:.4f} -> {m1['fyf_rmse']:.4f}, "
            f"rear rmse {m0['fyr_rmse']:.4f} -> {m1['fyr_rmse']:.4f}")


def test_sweep_loss_settles_after_first_round(warm_start_runs):
    for _, report in warm_start_runs.values():
        losses = [it["sweep_loss"] for it in report["iterations"]]
        assert all(b <= a for a, b in zip(losses[1:], losses[2:])), losses


def test_criterion_6_architecture_ordering():
    cfg = cli.RunConfig()
    plant = cfg.plant
    assert plant.relaxation_length == 0.6
    steer = make_maneuver("sine_sweep", 30.0, plant.T_s, 0.3, f0=0.05, f1=0.5)
    log = collect_telemetry(plant, 30.0, 10.0, steering=steer)
    ds = res.build_residual_dataset(log, plant.true_tires, plant.vehicle, 64, smooth_window=51)
    rmse = {}
    for arch in res.ARCHS:
        model, _ = res.train(None, ds, res.TrainConfig(arch=arch, smooth_window=51), log.T_s)
        rmse[arch] = res.residual_rmse(model, ds)
    verdict(6, rmse["s4"] < rmse["mlp"],
            f"held-out rmse s4 {rmse['s4']:.3f}, mlp {rmse['mlp']:.3f}, rnn {rmse['rnn']:.3f} (not gated)")


def test_criterion_7_equilibrium_extraction(vehicle):
    worst = 0.0
    count = 0
    for method, cfg in (("equilibrium", SweepConfig(v_x_bar=10.0)),
                        ("settle", SweepConfig(v_x_bar=10.0, delta_max=0.1, method="settle", levels=20,
                                               duration=10.0, max_level_time=5.0))):
        s = virtual_sweep(TRUE, None, vehicle, cfg)
        for axle in ("front", "rear"):
            alpha, fy = s.axle(axle)
            keep = (np.abs(alpha) <= 0.05) & (np.abs(alpha) > 1e-3)
            model = dyn.pacejka_normalized(alpha[keep], getattr(TRUE, axle))
            count += int(keep.sum())
            worst = max(worst, float(np.max(np.abs(fy[keep] - model) / np.abs(model))))
    verdict(7, worst < 0.02 and count > 20, f"{count} points, worst relative error {worst:.2e}")


def test_criterion_8_friction_mapping():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(2000):
        n = int(rng.integers(2, 12))
        mu = rng.uniform(0.05, 1.6, n)
        p = rng.dirichlet(np.ones(n))
        b = FrictionBasis(tuple(f"c{i}" for i in range(n)), mu)
        exact = math.fsum(float(x) * float(y) for x, y in zip(p, mu))
        worst = max(worst, abs(expected_friction(p, b).mu_hat - exact) / (n * mu.max()))
    b = FrictionBasis.default()
    one_hot = all(expected_friction(np.eye(4)[i], b).mu_hat == b.mu[i] for i in range(4))
    seed_value = warm_start_D(FrictionPrior(0.80, "manual")) == 0.80
    verdict(8, worst <= 1e-15 and one_hot and seed_value,
            f"scaled error {worst:.1e}, one-hot {one_hot}, mu 0.80 -> D {warm_start_D(FrictionPrior(0.8))}")


def test_criterion_9_determinism(tmp_path):
    cfg = cli.config_from_dict({"maneuver": {"duration": 20.0}, "train": {"steps": 300},
                                "outer": {"max_outer": 2}, "seed": 7})
    blobs = []
    for run in ("a", "b"):
        cli.cmd_pipeline(cfg, tmp_path / run)
        blobs.append((tmp_path / run / cli.REPORT_FILE).read_bytes())
    verdict(9, blobs[0] == blobs[1] and b"wall_time" not in blobs[0],
            f"report.json {len(blobs[0])} bytes, identical {blobs[0] == blobs[1]}")


def test_criterion_10_nelder_mead():
    quad = nelder_mead(lambda x: (x[0] - 2.0) ** 2, [0.0])
    rosen = nelder_mead(lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2, [-1.2, 1.0],
                        NmOptions(max_iter=2000))
    monotone = all(np.all(np.diff(r.best_history) <= 0) for r in (quad, rosen))
    ok = abs(quad.x[0] - 2.0) < 1e-4 and np.max(np.abs(rosen.x - 1.0)) < 1e-3 \
        and rosen.iterations <= 2000 and monotone
    verdict(10, ok, f"quadratic x={quad.x[0]:.6f}, rosenbrock x={np.round(rosen.x, 6).tolist()} "
                    f"in {rosen.iterations} iterations, monotone {monotone}")
