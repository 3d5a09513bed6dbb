import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tireid import dynamics as dyn
from tireid import residual as res
from tireid.dynamics import AxlePacejka, TireParams, VehicleState
from tireid.errors import ConfigError, ContractError, StageError
from tireid.identify import (LOWER, UPPER, IdentifyReport, OuterConfig, SweepConfig, curve_rmse,
                             fit_axle, identify_iterative, quasi_steady_filter, steady_state_forces,
                             virtual_sweep)
from tireid.optimize import NmOptions
from tireid.plant import PlantConfig, collect_telemetry, make_maneuver
from tireid.vision import FrictionPrior

# m v_x omega / L * (l_r / cos(delta), l_f) at (20, 0.2, 0.05), 30-digit arithmetic
SSF_FRONT = 3123.90406663439901
SSF_REAR = 2880.0

FRONT = AxlePacejka(10.0, 1.9, 0.8, 0.97)


def test_steady_state_forces(vehicle):
    f, r = steady_state_forces(20.0, 0.2, 0.05, vehicle)
    assert f == pytest.approx(SSF_FRONT, abs=1e-9)
    assert r == pytest.approx(SSF_REAR, abs=1e-9)
    assert steady_state_forces(20.0, 0.0, 0.05, vehicle) == (0.0, 0.0)
    f, r = steady_state_forces(12.0, 0.3, 0.0, vehicle)
    assert f / r == pytest.approx(vehicle.l_r / vehicle.l_f, rel=1e-15)


def _step_response(vehicle, true_tires, n=600, T_s=0.01):
    steer = np.where(np.arange(n) < 100, 0.0, 0.03)
    traj = dyn.simulate_nominal(VehicleState(20.0), steer, true_tires, vehicle, T_s)
    return traj[:, 1], traj[:, 2]


def test_filter_keeps_settled_equilibrium(vehicle, true_tires):
    cfg = SweepConfig(settle_window=50)
    n = 400
    vy, om = np.full(n, 0.12), np.full(n, 0.05)
    np.testing.assert_array_equal(quasi_steady_filter(vy, om, cfg), np.arange(50, n))
    cfg_inf = SweepConfig(settle_window=10, qss_omega_dot_tol=math.inf)
    vy, om = _step_response(vehicle, true_tires)
    np.testing.assert_array_equal(quasi_steady_filter(vy, om, cfg_inf), np.arange(10, vy.size))


def test_filter_drops_step_transient(vehicle, true_tires):
    cfg = SweepConfig(settle_window=0, qss_omega_dot_tol=0.05)
    vy, om = _step_response(vehicle, true_tires)
    kept = quasi_steady_filter(vy, om, cfg)
    w_dot = np.abs(np.gradient(om, cfg.T_s))
    v_dot = np.abs(np.gradient(vy, cfg.T_s))
    busy = np.flatnonzero((w_dot >= 0.05) | (v_dot >= 0.5))
    assert busy.size > 10 and not set(busy) & set(kept)
    assert 95 in kept and 550 in kept
    with pytest.raises(ContractError):
        quasi_steady_filter([0.0, 1.0], [0.0, 1.0], cfg)


@pytest.fixture(scope="module")
def nominal_sweep(vehicle=dyn.VehicleParams(), tires=TireParams(FRONT, AxlePacejka(12.0, 1.7, 0.8, 0.95))):
    return virtual_sweep(tires, None, vehicle, SweepConfig(v_x_bar=10.0))


def test_nominal_sweep_matches_curve(nominal_sweep, true_tires):
    for name in ("front", "rear"):
        alpha, fy = nominal_sweep.axle(name)
        c = getattr(true_tires, name)
        below = np.abs(alpha) < 0.12
        assert below.sum() >= 8
        assert np.max(np.abs(fy[below] - dyn.pacejka_normalized(alpha[below], c))) < 0.02


def test_equilibrium_sweep_is_exact(nominal_sweep, true_tires):
    # steady states of the discrete map are exact equilibria, so extraction has no approximation
    err = nominal_sweep.front_fy - dyn.pacejka_normalized(nominal_sweep.front_alpha, true_tires.front)
    assert np.max(np.abs(err)) < 1e-9


def test_sweep_passes_the_front_peak(nominal_sweep):
    assert np.max(nominal_sweep.front_alpha) > 0.2
    assert nominal_sweep.delta_max <= 0.5


def test_zero_steer_sweep(vehicle, true_tires):
    s = virtual_sweep(true_tires, None, vehicle, SweepConfig(v_x_bar=10.0, delta_max=0.0))
    assert len(s) > 0
    for name in ("front", "rear"):
        alpha, fy = s.axle(name)
        assert np.max(np.abs(alpha)) < 1e-12 and np.max(np.abs(fy)) < 1e-12


def test_zero_corrector_changes_nothing(vehicle, true_tires, nominal_sweep):
    zero = res.init_model("s4", 0)
    s = virtual_sweep(true_tires, zero, vehicle, SweepConfig(v_x_bar=10.0))
    for name in ("front", "rear"):
        np.testing.assert_array_equal(s.axle(name)[0], nominal_sweep.axle(name)[0])
        np.testing.assert_array_equal(s.axle(name)[1], nominal_sweep.axle(name)[1])


def test_settle_method(vehicle, true_tires):
    cfg = SweepConfig(v_x_bar=10.0, delta_max=0.1, method="settle", levels=20, duration=10.0,
                      max_level_time=5.0)
    s = virtual_sweep(true_tires, None, vehicle, cfg)
    assert len(s) > 100
    err = s.front_fy - dyn.pacejka_normalized(s.front_alpha, true_tires.front)
    assert np.max(np.abs(err)) < 0.02


def test_sweep_csv(nominal_sweep):
    lines = nominal_sweep.to_csv().splitlines()
    assert lines[0] == "axle,alpha,fy_norm"
    assert len(lines) == 1 + 2 * len(nominal_sweep)


def test_sweep_config_validation():
    with pytest.raises(ConfigError, match="sweep.delta_max"):
        SweepConfig(delta_max=0.9)
    with pytest.raises(ConfigError, match="sweep.method"):
        SweepConfig(method="ramp")


def _curve_data(c, lo=-0.15, hi=0.15, n=61):
    alpha = np.linspace(lo, hi, n)
    return alpha, dyn.pacejka_normalized(alpha, c)


def test_fit_recovers_generating_curve():
    alpha, fy = _curve_data(FRONT)
    r = fit_axle(alpha, fy, AxlePacejka(8.0, 1.5, 0.7, 0.5))
    x, t = r.coeffs.as_array(), FRONT.as_array()
    assert abs(x[2] - t[2]) / t[2] < 0.01
    assert np.all(np.abs(x[[0, 1, 3]] - t[[0, 1, 3]]) / np.abs(t[[0, 1, 3]]) < 0.05)


def test_fit_zero_data_collapses_peak():
    alpha = np.linspace(-0.15, 0.15, 31)
    r = fit_axle(alpha, np.zeros_like(alpha), AxlePacejka(8.0, 1.5, 0.1, 0.5))
    assert r.coeffs.D <= 0.05


def test_fit_from_optimum():
    alpha, fy = _curve_data(FRONT)
    r = fit_axle(alpha, fy, FRONT, shape_starts=())
    assert r.loss < 1e-12
    assert r.nm_iterations < 200


def test_fit_contracts():
    with pytest.raises(ContractError):
        fit_axle([], [], FRONT)
    with pytest.raises(ContractError):
        fit_axle(np.zeros(5), np.zeros(5), FRONT)


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.5, 0.5), st.integers(0, 10 ** 6))
def test_fit_respects_bounds(scale, seed):
    rng = np.random.default_rng(seed)
    alpha = np.linspace(-0.3, 0.3, 20)
    fy = scale * np.sign(alpha) + rng.normal(0, 0.3, alpha.size)
    r = fit_axle(alpha, fy, AxlePacejka(8.0, 1.5, 0.5, 0.5), NmOptions(max_iter=300), shape_starts=())
    x = r.coeffs.as_array()
    assert np.all(x >= LOWER) and np.all(x <= UPPER)


def test_warm_start_argmin_invariance():
    alpha, fy = _curve_data(FRONT, -0.3, 0.3, 121)
    opts = NmOptions(max_iter=2000)
    a = fit_axle(alpha, fy, AxlePacejka(8.0, 1.5, 0.51, 0.5), opts)
    b = fit_axle(alpha, fy, AxlePacejka(8.0, 1.5, 0.80, 0.5), opts)
    xa, xb = a.coeffs.as_array(), b.coeffs.as_array()
    assert np.max(np.abs(xa - xb) / np.abs(xb)) < 0.01
    assert a.nm_iterations != b.nm_iterations


def test_curve_rmse_offset_peak():
    off = AxlePacejka(FRONT.B, FRONT.C, FRONT.D + 0.1, FRONT.E)
    alpha = np.linspace(-0.3, 0.3, 601)
    direct = math.sqrt(np.mean((dyn.pacejka_normalized(alpha, off) - dyn.pacejka_normalized(alpha, FRONT)) ** 2))
    assert curve_rmse(off, FRONT) == pytest.approx(direct, rel=1e-12)
    assert 0.05 <= curve_rmse(off, FRONT) <= 0.1
    assert curve_rmse(FRONT, FRONT) == 0.0


@pytest.fixture(scope="module")
def clean_log():
    cfg = PlantConfig(relaxation_length=0.0)
    steer = make_maneuver("triangle", 30.0, cfg.T_s, 0.5)
    return collect_telemetry(cfg, 30.0, 10.0, steering=steer)


def test_true_start_is_a_fixed_point(clean_log, vehicle, true_tires):
    report = identify_iterative(clean_log, vehicle, true_tires,
                                train_cfg=res.TrainConfig(steps=200, eval_every=50))
    assert report.outer_iterations == 1 and report.converged
    assert report.iterations[0]["sweep_loss"] < 1e-4
    assert report.iterations[0]["max_relative_change"] < 1e-3


def test_prior_overrides_peak(clean_log, vehicle, true_tires):
    init = TireParams(AxlePacejka(10.0, 1.9, 0.3, 0.97), AxlePacejka(12.0, 1.7, 0.3, 0.95))
    report = identify_iterative(clean_log, vehicle, init, FrictionPrior(0.8, "manual"),
                                train_cfg=res.TrainConfig(steps=50, eval_every=25),
                                outer=OuterConfig(max_outer=1))
    assert report.initial.front.D == 0.8 and report.initial.rear.D == 0.8
    assert report.warm_start == {"mu_hat": 0.8, "source": "manual", "D_initial": 0.8}
    d = report.to_dict(include_wall_time=False)
    assert "wall_time" not in d and d["schema_version"] == 1


def test_stage_errors_are_tagged(clean_log, vehicle, true_tires):
    short = res.TrainConfig(window=3000, steps=10)
    with pytest.raises(StageError, match=r"\[residual\] outer iteration 1"):
        identify_iterative(clean_log, vehicle, true_tires, train_cfg=short)
