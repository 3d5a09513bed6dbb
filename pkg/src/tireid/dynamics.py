"""Nominal single-track vehicle model and the Magic Formula lateral tire curve.

Longitudinal speed is an exogenous input held constant over each step; the
integrated states are lateral velocity and yaw rate.  All angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, astuple

import numpy as np

from .errors import ConfigError, ContractError, DomainError

MIN_VX = 0.5          # m/s, slip angles are ill-conditioned below this
MAX_DT = 0.05         # s
STEER_LIMIT = 0.6     # rad

B_BOUNDS = (1.0, 30.0)
C_BOUNDS = (1.0, 2.5)     # lower bound exclusive
D_BOUNDS = (0.0, 1.6)     # lower bound exclusive
E_BOUNDS = (-10.0, 1.0)   # only the upper bound is physical; lower is a fit box


@dataclass(frozen=True)
class VehicleParams:
    m: float = 1500.0
    I_z: float = 2250.0
    l_f: float = 1.2
    l_r: float = 1.3
    g: float = 9.81

    def __post_init__(self):
        for name in ("m", "I_z", "l_f", "l_r", "g"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"VehicleParams.{name} must be positive, got {value!r}")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r


@dataclass(frozen=True)
class AxlePacejka:
    """Normalized Magic Formula coefficients for one axle (D is a peak friction)."""

    B: float
    C: float
    D: float
    E: float

    def __post_init__(self):
        problems = []
        if not B_BOUNDS[0] <= self.B <= B_BOUNDS[1]:
            problems.append(f"B={self.B} not in [1, 30]")
        if not C_BOUNDS[0] < self.C <= C_BOUNDS[1]:
            problems.append(f"C={self.C} not in (1, 2.5]")
        if not D_BOUNDS[0] < self.D <= D_BOUNDS[1]:
            problems.append(f"D={self.D} not in (0, 1.6]")
        if not self.E <= E_BOUNDS[1]:
            problems.append(f"E={self.E} exceeds 1")
        if not all(math.isfinite(v) for v in astuple(self)):
            problems.append("non-finite coefficient")
        if problems:
            raise DomainError("invalid AxlePacejka: " + "; ".join(problems))

    def as_array(self) -> np.ndarray:
        return np.array([self.B, self.C, self.D, self.E], dtype=float)

    @classmethod
    def from_array(cls, x) -> "AxlePacejka":
        b, c, d, e = (float(v) for v in x)
        return cls(b, c, d, e)

    def with_D(self, d: float) -> "AxlePacejka":
        return AxlePacejka(self.B, self.C, d, self.E)


@dataclass(frozen=True)
class TireParams:
    front: AxlePacejka
    rear: AxlePacejka

    def as_dict(self) -> dict:
        return {
            "front": dict(zip("BCDE", self.front.as_array().tolist())),
            "rear": dict(zip("BCDE", self.rear.as_array().tolist())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TireParams":
        return cls(
            AxlePacejka(*(float(d["front"][k]) for k in "BCDE")),
            AxlePacejka(*(float(d["rear"][k]) for k in "BCDE")),
        )


@dataclass(frozen=True)
class VehicleState:
    v_x: float
    v_y: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        _check_vx(self.v_x)
        if not (math.isfinite(self.v_y) and math.isfinite(self.omega)):
            raise DomainError("VehicleState.v_y and VehicleState.omega must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.v_x, self.v_y, self.omega], dtype=float)


def _check_vx(v_x):
    v = np.asarray(v_x, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(v <= MIN_VX):
        raise DomainError(f"v_x must exceed {MIN_VX} m/s, got {v_x!r}")


def default_true_tires() -> TireParams:
    return TireParams(AxlePacejka(10.0, 1.9, 0.8, 0.97), AxlePacejka(12.0, 1.7, 0.8, 0.95))


def slip_angles(state: VehicleState, delta: float, p: VehicleParams) -> tuple[float, float]:
    """Front and rear axle slip angles of the single-track model."""
    _check_vx(state.v_x)
    return _slip(state.v_x, state.v_y, state.omega, delta, p.l_f, p.l_r)


def _slip(v_x, v_y, omega, delta, l_f, l_r):
    alpha_f = delta - np.arctan((v_y + l_f * omega) / v_x)
    alpha_r = -np.arctan((v_y - l_r * omega) / v_x)
    return alpha_f, alpha_r


def pacejka_normalized(alpha, c: AxlePacejka):
    """Lateral force over vertical load, ``D sin(C atan(B a - E (B a - atan(B a))))``."""
    return _magic(alpha, c.B, c.C, c.D, c.E)


def _magic(alpha, B, C, D, E):
    ba = B * np.asarray(alpha, dtype=float)
    out = D * np.sin(C * np.arctan(ba - E * (ba - np.arctan(ba))))
    return float(out) if out.ndim == 0 else out


def axle_loads(p: VehicleParams) -> tuple[float, float]:
    """Static front/rear axle loads from the lever rule (no load transfer)."""
    weight = p.m * p.g
    f_zf = weight * p.l_r / p.wheelbase
    return f_zf, weight - f_zf


def state_derivative(state: VehicleState, delta: float, tires: TireParams,
                     p: VehicleParams) -> tuple[float, float]:
    _check_vx(state.v_x)
    return _deriv(state.v_x, state.v_y, state.omega, delta, _coeffs(tires), p)


def _coeffs(tires: TireParams):
    return (astuple(tires.front), astuple(tires.rear))


def _deriv(v_x, v_y, omega, delta, coeffs, p):
    # Scalar hot path of the integrator: plain math is ~10x faster than numpy here.
    (bf, cf, df, ef), (br, cr, dr, er) = coeffs
    f_zf, f_zr = axle_loads(p)
    a_f = delta - math.atan((v_y + p.l_f * omega) / v_x)
    a_r = -math.atan((v_y - p.l_r * omega) / v_x)
    x_f = bf * a_f
    x_r = br * a_r
    f_yf = f_zf * df * math.sin(cf * math.atan(x_f - ef * (x_f - math.atan(x_f))))
    f_yr = f_zr * dr * math.sin(cr * math.atan(x_r - er * (x_r - math.atan(x_r))))
    return _accelerations(v_x, omega, delta, f_yf, f_yr, p)


def _accelerations(v_x, omega, delta, f_yf, f_yr, p):
    cos_d = math.cos(delta)
    dv_y = (f_yr + f_yf * cos_d - p.m * v_x * omega) / p.m
    domega = (f_yf * p.l_f * cos_d - f_yr * p.l_r) / p.I_z
    return dv_y, domega


def _check_dt(dt):
    if not (0.0 < dt <= MAX_DT):
        raise ConfigError(f"dt must lie in (0, {MAX_DT}], got {dt!r}")


def _rk4(v_x, v_y, omega, delta, coeffs, p, dt):
    k1 = _deriv(v_x, v_y, omega, delta, coeffs, p)
    k2 = _deriv(v_x, v_y + 0.5 * dt * k1[0], omega + 0.5 * dt * k1[1], delta, coeffs, p)
    k3 = _deriv(v_x, v_y + 0.5 * dt * k2[0], omega + 0.5 * dt * k2[1], delta, coeffs, p)
    k4 = _deriv(v_x, v_y + dt * k3[0], omega + dt * k3[1], delta, coeffs, p)
    v_y = v_y + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    omega = omega + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    return v_y, omega


def step_nominal(state: VehicleState, delta: float, tires: TireParams, p: VehicleParams,
                 dt: float) -> VehicleState:
    """Advance ``(v_y, omega)`` by one classical RK4 step with ``v_x`` frozen."""
    _check_dt(dt)
    _check_vx(state.v_x)
    v_y, omega = _rk4(state.v_x, state.v_y, state.omega, float(delta), _coeffs(tires), p, dt)
    return VehicleState(state.v_x, v_y, omega)


def step_nominal_batch(v_x, v_y, omega, delta, tires: TireParams, p: VehicleParams, dt: float):
    """Vectorised one-step prediction over arrays of independent states."""
    _check_dt(dt)
    _check_vx(v_x)
    (bf, cf, df, ef), (br, cr, dr, er) = _coeffs(tires)
    f_zf, f_zr = axle_loads(p)
    v_x, v_y, omega, delta = (np.asarray(a, dtype=float) for a in (v_x, v_y, omega, delta))
    cos_d = np.cos(delta)

    def f(vy, om):
        a_f, a_r = _slip(v_x, vy, om, delta, p.l_f, p.l_r)
        f_yf = f_zf * _magic(a_f, bf, cf, df, ef)
        f_yr = f_zr * _magic(a_r, br, cr, dr, er)
        return ((f_yr + f_yf * cos_d - p.m * v_x * om) / p.m,
                (f_yf * p.l_f * cos_d - f_yr * p.l_r) / p.I_z)

    k1 = f(v_y, omega)
    k2 = f(v_y + 0.5 * dt * k1[0], omega + 0.5 * dt * k1[1])
    k3 = f(v_y + 0.5 * dt * k2[0], omega + 0.5 * dt * k2[1])
    k4 = f(v_y + dt * k3[0], omega + dt * k3[1])
    return (v_y + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            omega + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


def simulate_nominal(initial: VehicleState, steering, tires: TireParams, p: VehicleParams,
                     dt: float) -> np.ndarray:
    """Roll the nominal model out under a steering sequence.

    Returns an ``(len(steering) + 1, 3)`` array of ``[v_x, v_y, omega]`` rows whose
    first row is ``initial``.
    """
    steering = np.asarray(steering, dtype=float).ravel()
    if steering.size == 0:
        raise ContractError("steering sequence is empty")
    _check_dt(dt)
    _check_vx(initial.v_x)
    coeffs = _coeffs(tires)
    out = np.empty((steering.size + 1, 3))
    v_x, v_y, omega = initial.v_x, initial.v_y, initial.omega
    out[0] = v_x, v_y, omega
    for k, delta in enumerate(steering):
        try:
            v_y, omega = _rk4(v_x, v_y, omega, float(delta), coeffs, p, dt)
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise DomainError(f"step {k}: {exc}") from exc
        if not (math.isfinite(v_y) and math.isfinite(omega)):
            raise DomainError(f"step {k}: non-finite state")
        out[k + 1] = v_x, v_y, omega
    return out
