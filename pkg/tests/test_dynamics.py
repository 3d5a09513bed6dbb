import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tireid import dynamics as dyn
from tireid.dynamics import AxlePacejka, TireParams, VehicleParams, VehicleState
from tireid.errors import ConfigError, ContractError, DomainError

# frozen from a 30-digit mpmath evaluation of the slip, tire and force chain
SLIP_F = 0.0190099246114305713
SLIP_R = -0.0184978898916271420
PACEJKA_01 = 0.955842103084141220
DERIV_DVY = 3.74785166525265426
DERIV_DOMEGA = 2.99828133220212341

axles = st.builds(AxlePacejka, st.floats(1.0, 30.0), st.floats(1.01, 2.5), st.floats(0.05, 1.6),
                  st.floats(-3.0, 1.0))


def test_slip_angles_zero_lateral_state(vehicle):
    assert dyn.slip_angles(VehicleState(20.0), 0.05, vehicle) == (0.05, 0.0)


def test_slip_angles_oracle(vehicle):
    a_f, a_r = dyn.slip_angles(VehicleState(20.0, 0.5, 0.1), 0.05, vehicle)
    assert a_f == pytest.approx(SLIP_F, abs=1e-15)
    assert a_r == pytest.approx(SLIP_R, abs=1e-15)


def test_slip_angles_odd(vehicle):
    a = dyn.slip_angles(VehicleState(20.0, 0.5, 0.1), 0.05, vehicle)
    b = dyn.slip_angles(VehicleState(20.0, -0.5, -0.1), -0.05, vehicle)
    assert b == (-a[0], -a[1])


@pytest.mark.parametrize("v_x", [0.0, -3.0, 0.5])
def test_low_speed_rejected(vehicle, v_x):
    with pytest.raises(DomainError, match="v_x"):
        VehicleState(v_x)


def test_pacejka_values():
    c = AxlePacejka(10.0, 1.9, 1.0, 0.97)
    assert dyn.pacejka_normalized(0.0, c) == 0.0
    assert dyn.pacejka_normalized(0.1, c) == pytest.approx(PACEJKA_01, abs=1e-14)


@given(axles, st.floats(-0.5, 0.5))
def test_pacejka_odd_and_bounded(c, alpha):
    y = dyn.pacejka_normalized(alpha, c)
    assert dyn.pacejka_normalized(-alpha, c) == -y
    assert abs(y) <= c.D * (1 + 1e-12)


@given(axles)
@settings(max_examples=50)
def test_pacejka_linear_slope(c):
    h = 1e-6
    slope = (dyn.pacejka_normalized(h, c) - dyn.pacejka_normalized(-h, c)) / (2 * h)
    assert slope == pytest.approx(c.B * c.C * c.D, rel=1e-3)


@pytest.mark.parametrize("c", [AxlePacejka(10.0, 1.9, 0.8, 0.97), AxlePacejka(12.0, 1.7, 0.8, 0.95),
                               AxlePacejka(5.0, 1.3, 1.1, -1.0)])
def test_pacejka_peak_reaches_D(c):
    grid = np.linspace(-1.5, 1.5, 300001)
    assert np.max(dyn.pacejka_normalized(grid, c)) == pytest.approx(c.D, rel=5e-3)


@pytest.mark.parametrize("bad", [(0.5, 1.9, 0.8, 0.9), (10, 1.0, 0.8, 0.9), (10, 1.9, 0.0, 0.9),
                                 (10, 1.9, 1.7, 0.9), (10, 1.9, 0.8, 1.2), (10, 1.9, math.nan, 0.0)])
def test_axle_bounds(bad):
    with pytest.raises(DomainError):
        AxlePacejka(*bad)


def test_axle_loads():
    assert dyn.axle_loads(VehicleParams(l_f=1.25, l_r=1.25)) == pytest.approx((7357.5, 7357.5))
    f, r = dyn.axle_loads(VehicleParams())
    assert (f, r) == pytest.approx((7651.8, 7063.2), abs=1e-9)
    p = VehicleParams(m=1234.5, l_f=0.9, l_r=1.7, g=9.7)
    assert sum(dyn.axle_loads(p)) == pytest.approx(p.m * p.g, rel=1e-15)


def test_state_derivative_equilibrium(vehicle, true_tires):
    assert dyn.state_derivative(VehicleState(20.0), 0.0, true_tires, vehicle) == (0.0, 0.0)


def test_state_derivative_oracle(vehicle):
    axle = AxlePacejka(10.0, 1.9, 1.0, 0.97)
    dv, dw = dyn.state_derivative(VehicleState(20.0), 0.05, TireParams(axle, axle), vehicle)
    assert dv == pytest.approx(DERIV_DVY, rel=1e-13)
    assert dw == pytest.approx(DERIV_DOMEGA, rel=1e-13)


def test_state_derivative_mass_scaling(true_tires):
    s = VehicleState(15.0, 0.3, 0.2)
    a = dyn.state_derivative(s, 0.04, true_tires, VehicleParams(m=1500.0, I_z=2250.0))
    b = dyn.state_derivative(s, 0.04, true_tires, VehicleParams(m=3000.0, I_z=4500.0))
    assert b == pytest.approx(a, rel=1e-12)


def test_step_fixed_point(vehicle, true_tires):
    s = VehicleState(20.0)
    assert dyn.step_nominal(s, 0.0, true_tires, vehicle, 0.01) == s


@pytest.mark.parametrize("dt", [0.0, -0.01, 0.051])
def test_step_dt_range(vehicle, true_tires, dt):
    with pytest.raises(ConfigError):
        dyn.step_nominal(VehicleState(20.0), 0.0, true_tires, vehicle, dt)


def _rollout_error(dt, tires, p, T=1.0):
    n = int(round(T / dt))
    t = np.arange(n) * dt
    steer = 0.05 * np.sin(2 * np.pi * 0.5 * t)
    ref_dt = 1e-5
    m = int(round(dt / ref_dt))
    fine = dyn.simulate_nominal(VehicleState(20.0), np.repeat(steer, m), tires, p, ref_dt)
    coarse = dyn.simulate_nominal(VehicleState(20.0), steer, tires, p, dt)
    return np.max(np.abs(coarse[-1] - fine[-1]))


def test_rk4_order(vehicle, true_tires):
    e1 = _rollout_error(0.04, true_tires, vehicle)
    e2 = _rollout_error(0.02, true_tires, vehicle)
    order = math.log2(e1 / e2)
    assert 3.8 <= order <= 4.2


def test_rk4_fine_reference(vehicle, true_tires):
    steer = np.full(100, 0.05)
    coarse = dyn.simulate_nominal(VehicleState(20.0), steer, true_tires, vehicle, 0.01)
    fine = dyn.simulate_nominal(VehicleState(20.0), np.repeat(steer, 10), true_tires, vehicle, 0.001)
    assert abs(coarse[-1, 1] - fine[-1, 1]) < 1e-6


def test_simulate_contract(vehicle, true_tires):
    out = dyn.simulate_nominal(VehicleState(20.0), np.zeros(25), true_tires, vehicle, 0.01)
    assert out.shape == (26, 3)
    assert np.all(out == out[0])
    with pytest.raises(ContractError):
        dyn.simulate_nominal(VehicleState(20.0), [], true_tires, vehicle, 0.01)


def test_simulate_concatenation(vehicle, true_tires):
    rng = np.random.default_rng(1)
    a, b = rng.uniform(-0.05, 0.05, 40), rng.uniform(-0.05, 0.05, 30)
    whole = dyn.simulate_nominal(VehicleState(20.0), np.concatenate([a, b]), true_tires, vehicle, 0.01)
    first = dyn.simulate_nominal(VehicleState(20.0), a, true_tires, vehicle, 0.01)
    second = dyn.simulate_nominal(VehicleState(*first[-1]), b, true_tires, vehicle, 0.01)
    np.testing.assert_array_equal(whole, np.vstack([first, second[1:]]))


def test_batch_matches_scalar(vehicle, true_tires):
    rng = np.random.default_rng(2)
    vy, om, de = rng.normal(0, 0.3, 20), rng.normal(0, 0.2, 20), rng.uniform(-0.1, 0.1, 20)
    bvy, bom = dyn.step_nominal_batch(15.0, vy, om, de, true_tires, vehicle, 0.01)
    for k in range(20):
        s = dyn.step_nominal(VehicleState(15.0, vy[k], om[k]), de[k], true_tires, vehicle, 0.01)
        assert (bvy[k], bom[k]) == pytest.approx((s.v_y, s.omega), abs=1e-13)
