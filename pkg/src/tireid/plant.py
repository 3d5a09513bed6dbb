"""Synthetic ground-truth plant, maneuver generation and telemetry capture.

The plant is the single-track model driven by the *true* tire parameters plus
one deliberately unmodeled effect: first-order tire relaxation, i.e. each axle
force lags its steady-state Magic Formula value with time constant
``relaxation_length / v_x``.  Measurement noise is added to the recorded
``v_y`` and ``omega`` channels only; the plant itself evolves noise free.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath

import numpy as np

from . import dynamics as dyn
from .dynamics import TireParams, VehicleParams, VehicleState
from .errors import ConfigError, ContractError, DomainError, PathExhausted

TELEMETRY_HEADER = ("t", "vx", "vy", "omega", "delta")


@dataclass(frozen=True)
class PlantConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    true_tires: TireParams = field(default_factory=dyn.default_true_tires)
    relaxation_length: float = 0.6
    noise_std: tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    dt_plant: float = 0.001
    T_s: float = 0.01
    steer_limit: float = dyn.STEER_LIMIT

    def __post_init__(self):
        if not (math.isfinite(self.relaxation_length) and self.relaxation_length >= 0):
            raise ConfigError("plant.relaxation_length must be >= 0")
        if len(self.noise_std) != 2 or any(not (s >= 0) for s in self.noise_std):
            raise ConfigError("plant.noise_std must be two non-negative numbers")
        if not (0.005 <= self.T_s <= 0.05):
            raise ConfigError(f"plant.T_s must lie in [0.005, 0.05], got {self.T_s!r}")
        if not (0 < self.dt_plant <= self.T_s):
            raise ConfigError("plant.dt_plant must lie in (0, T_s]")
        if abs(self.T_s / self.dt_plant - round(self.T_s / self.dt_plant)) > 1e-9:
            raise ConfigError("plant.T_s must be an integer multiple of plant.dt_plant")
        if not (0 < self.steer_limit <= 1.0):
            raise ConfigError("plant.steer_limit must lie in (0, 1]")

    @property
    def substeps(self) -> int:
        return int(round(self.T_s / self.dt_plant))


@dataclass(frozen=True)
class PlantState:
    kinematic: VehicleState
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    lagged_forces: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class Path:
    waypoints: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ContractError("path needs at least two (x, y) waypoints")
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0):
            raise ContractError("consecutive path waypoints must be distinct")
        object.__setattr__(self, "waypoints", pts)

    @classmethod
    def sine(cls, length: float, amplitude: float, wavelength: float, spacing: float = 0.5,
             lead_in: float = 20.0) -> "Path":
        """Straight lead-in followed by a sinusoidal lane-change pattern."""
        x = np.arange(0.0, length + spacing, spacing)
        s = np.clip(x - lead_in, 0.0, None)
        y = amplitude * np.sin(2 * np.pi * s / wavelength)
        return cls(np.column_stack([x, y]))


@dataclass
class TelemetryLog:
    """Uniformly sampled ``[v_x, v_y, omega, delta]`` records."""

    T_s: float
    vx: np.ndarray
    vy: np.ndarray
    omega: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float).ravel() for a in (self.vx, self.vy, self.omega, self.delta)]
        n = arrays[0].size
        if any(a.size != n for a in arrays):
            raise ContractError("telemetry channels differ in length")
        if n < 2:
            raise ContractError("telemetry needs at least two records")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise DomainError("telemetry contains non-finite values")
        if np.any(arrays[0] <= dyn.MIN_VX):
            raise DomainError("telemetry v_x must stay above the low-speed limit")
        self.vx, self.vy, self.omega, self.delta = arrays

    def __len__(self):
        return self.vx.size

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self)) * self.T_s

    def inputs(self) -> np.ndarray:
        """``(n, 4)`` matrix of ``[v_x, v_y, omega, delta]``."""
        return np.column_stack([self.vx, self.vy, self.omega, self.delta])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(TELEMETRY_HEADER) + "\n")
        for k in range(len(self)):
            row = [format(k * self.T_s, ".12g")]
            row += [repr(float(a[k])) for a in (self.vx, self.vy, self.omega, self.delta)]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        FsPath(path).write_text(self.to_csv(), newline="\n")

    @classmethod
    def from_csv(cls, text: str) -> "TelemetryLog":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TELEMETRY_HEADER:
            raise ContractError(f"telemetry header must be {','.join(TELEMETRY_HEADER)}")
        rows = np.array([[float(v) for v in r] for r in reader if r], dtype=float)
        if rows.ndim != 2 or rows.shape[0] < 2:
            raise ContractError("telemetry needs at least two records")
        t = rows[:, 0]
        T_s = float(np.round(t[1] - t[0], 12))
        if T_s <= 0 or not np.allclose(np.diff(t), T_s, rtol=0, atol=1e-9):
            raise ContractError("telemetry timestamps must be strictly increasing and uniform")
        return cls(T_s, rows[:, 1], rows[:, 2], rows[:, 3], rows[:, 4])

    @classmethod
    def read_csv(cls, path) -> "TelemetryLog":
        return cls.from_csv(FsPath(path).read_text())


def initial_state(v_x: float) -> PlantState:
    return PlantState(VehicleState(float(v_x), 0.0, 0.0))


def _plant_rhs(x, v_x, delta, coeffs, loads, p, sigma):
    # x = [v_y, omega, X, Y, psi, F_yf, F_yr]
    v_y, omega, _, _, psi, f_lag_f, f_lag_r = x
    (bf, cf, df, ef), (br, cr, dr, er) = coeffs
    a_f = delta - math.atan((v_y + p.l_f * omega) / v_x)
    a_r = -math.atan((v_y - p.l_r * omega) / v_x)
    xf, xr = bf * a_f, br * a_r
    fss_f = loads[0] * df * math.sin(cf * math.atan(xf - ef * (xf - math.atan(xf))))
    fss_r = loads[1] * dr * math.sin(cr * math.atan(xr - er * (xr - math.atan(xr))))
    if sigma > 0:
        f_f, f_r = f_lag_f, f_lag_r
        rate = v_x / sigma
        dff, dfr = (fss_f - f_lag_f) * rate, (fss_r - f_lag_r) * rate
    else:
        f_f, f_r = fss_f, fss_r
        dff = dfr = 0.0
    dv_y, domega = dyn._accelerations(v_x, omega, delta, f_f, f_r, p)
    c, s = math.cos(psi), math.sin(psi)
    return (dv_y, domega, v_x * c - v_y * s, v_x * s + v_y * c, omega, dff, dfr)


def _rk4_vec(f, x, dt):
    k1 = f(x)
    k2 = f(tuple(a + 0.5 * dt * b for a, b in zip(x, k1)))
    k3 = f(tuple(a + 0.5 * dt * b for a, b in zip(x, k2)))
    k4 = f(tuple(a + dt * b for a, b in zip(x, k3)))
    return tuple(a + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
                 for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4))


def _steady_forces(kin: VehicleState, delta, cfg: PlantConfig):
    a_f, a_r = dyn.slip_angles(kin, delta, cfg.vehicle)
    f_zf, f_zr = dyn.axle_loads(cfg.vehicle)
    return (f_zf * dyn.pacejka_normalized(a_f, cfg.true_tires.front),
            f_zr * dyn.pacejka_normalized(a_r, cfg.true_tires.rear))


def step_plant(s: PlantState, delta: float, cfg: PlantConfig) -> PlantState:
    """Advance the plant by one inner step of ``cfg.dt_plant``."""
    kin = s.kinematic
    if not isinstance(kin, VehicleState):
        raise DomainError("plant state is missing its kinematic state")
    dyn._check_vx(kin.v_x)
    coeffs = dyn._coeffs(cfg.true_tires)
    loads = dyn.axle_loads(cfg.vehicle)
    sigma = cfg.relaxation_length
    delta = float(delta)
    x = (kin.v_y, kin.omega, *s.pose, *s.lagged_forces)
    x = _rk4_vec(lambda z: _plant_rhs(z, kin.v_x, delta, coeffs, loads, cfg.vehicle, sigma),
                 x, cfg.dt_plant)
    new_kin = VehicleState(kin.v_x, x[0], x[1])
    forces = (x[5], x[6]) if sigma > 0 else _steady_forces(new_kin, delta, cfg)
    return PlantState(new_kin, (x[2], x[3], x[4]), forces)


def pure_pursuit_steer(pose, v_x: float, path: Path, lookahead: float | None, wheelbase: float,
                       start_index: int = 0, steer_limit: float = dyn.STEER_LIMIT,
                       lookahead_time: float = 0.4) -> tuple[float, int]:
    """Pure pursuit steering toward the path's exit point on the lookahead circle.

    Segments are scanned forward from ``start_index``; the first one crossing the
    circle wins.  When ``lookahead`` is None it is ``lookahead_time * v_x``.
    Returns the clamped steering angle and the matched segment index.
    """
    l_d = lookahead_time * v_x if lookahead is None else lookahead
    if not l_d > 0:
        raise ConfigError("lookahead must be positive")
    x, y, psi = pose
    center = np.array([x, y])
    pts = path.waypoints
    for i in range(max(start_index, 0), pts.shape[0] - 1):
        p0, d = pts[i], pts[i + 1] - pts[i]
        f = p0 - center
        a, b, c = d @ d, 2.0 * (f @ d), f @ f - l_d * l_d
        disc = b * b - 4 * a * c
        if disc < 0:
            continue
        t = (-b + math.sqrt(disc)) / (2 * a)
        if 0.0 <= t <= 1.0:
            target = p0 + t * d
            break
    else:
        raise PathExhausted(f"no path point {l_d:.3g} m ahead of pose ({x:.3f}, {y:.3f})")
    dx, dy = target - center
    alpha_h = math.atan2(dy, dx) - psi
    alpha_h = math.atan2(math.sin(alpha_h), math.cos(alpha_h))
    delta = math.atan(2.0 * wheelbase * math.sin(alpha_h) / l_d)
    return float(np.clip(delta, -steer_limit, steer_limit)), i


def make_maneuver(kind: str, duration: float, T_s: float, amplitude: float, f0: float = 0.1,
                  f1: float = 1.0, period: float = 4.0, dither: float = 0.0,
                  steer_limit: float = dyn.STEER_LIMIT) -> np.ndarray:
    """Open-loop steering sequence sampled at ``T_s`` (``floor(duration/T_s) + 1`` samples).

    ``sine_sweep`` chirps linearly from ``f0`` to ``f1`` Hz, ``slalom`` is a
    fixed-period sine and ``ramp`` rises linearly from 0 to ``amplitude``,
    optionally with a ``dither * sin(2 pi t / period)`` wobble on top.
    ``triangle`` ramps up to ``amplitude`` at mid-run and back down to 0.
    """
    if not (T_s > 0 and duration > 0):
        raise ConfigError("duration and T_s must be positive")
    n = int(math.floor(duration / T_s + 1e-9)) + 1
    if n < 100:
        raise ConfigError(f"maneuver needs >= 100 samples, got {n}")
    if not abs(amplitude) + abs(dither) <= steer_limit:
        raise ConfigError(f"amplitude {amplitude} plus dither {dither} exceeds the steering limit {steer_limit}")
    t = np.arange(n) * T_s
    if kind == "ramp":
        ramp = np.linspace(0.0, amplitude, n)
        if dither:
            if not period > 2 * T_s:
                raise ConfigError("dither period must exceed two samples")
            ramp = ramp + dither * np.sin(2 * np.pi * t / period)
        return ramp
    if kind == "triangle":
        return amplitude * (1.0 - np.abs(np.linspace(-1.0, 1.0, n)))
    if kind == "sine_sweep":
        if not (f0 > 0 and f1 > 0):
            raise ConfigError("sine_sweep frequencies must be positive")
        span = t[-1]
        return amplitude * np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t * t / span))
    if kind == "slalom":
        if not period > 2 * T_s:
            raise ConfigError("slalom period must exceed two samples")
        return amplitude * np.sin(2 * np.pi * t / period)
    raise ConfigError(f"unknown maneuver kind {kind!r}; expected sine_sweep, slalom, ramp or triangle")


def collect_telemetry(cfg: PlantConfig, duration: float, v_x: float = 20.0, steering=None,
                      path: Path | None = None, lookahead: float | None = 8.0,
                      return_truth: bool = False):
    """Drive the plant and record telemetry every ``T_s``.

    Exactly one of ``steering`` (one angle per record, zero-order held) or
    ``path`` (closed-loop pure pursuit at the telemetry rate) must be given.
    ``v_x`` may be a scalar or one value per record.
    """
    if not duration > 0:
        raise ConfigError("duration must be positive")
    if (steering is None) == (path is None):
        raise ConfigError("give exactly one of steering or path")
    n = int(math.floor(duration / cfg.T_s + 1e-9)) + 1
    speeds = np.broadcast_to(np.asarray(v_x, dtype=float), (n,)).copy() if np.ndim(v_x) == 0 \
        else np.asarray(v_x, dtype=float)
    if speeds.shape != (n,):
        raise ContractError(f"v_x needs {n} values, got {speeds.shape}")
    if steering is not None:
        steering = np.asarray(steering, dtype=float).ravel()
        if steering.size < n:
            raise ContractError(f"steering needs at least {n} samples, got {steering.size}")
    vy = np.empty(n)
    om = np.empty(n)
    de = np.empty(n)
    state = initial_state(speeds[0])
    seg = 0
    wheelbase = cfg.vehicle.wheelbase
    for k in range(n):
        if state.kinematic.v_x != speeds[k]:
            state = replace(state, kinematic=VehicleState(speeds[k], state.kinematic.v_y,
                                                          state.kinematic.omega))
        if path is not None:
            try:
                delta, seg = pure_pursuit_steer(state.pose, speeds[k], path, lookahead, wheelbase,
                                                seg, cfg.steer_limit)
            except PathExhausted as exc:
                raise ContractError(f"path too short for {duration} s at record {k}: {exc}") from exc
        else:
            delta = float(np.clip(steering[k], -cfg.steer_limit, cfg.steer_limit))
        vy[k], om[k], de[k] = state.kinematic.v_y, state.kinematic.omega, delta
        if k == n - 1:
            break
        for _ in range(cfg.substeps):
            state = step_plant(state, delta, cfg)
        if abs(state.kinematic.v_y) > state.kinematic.v_x:
            raise DomainError(f"plant left the valid region at record {k + 1} (|v_y| > v_x)")
    truth = TelemetryLog(cfg.T_s, speeds, vy, om, de)
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal((2, n))
    log = TelemetryLog(cfg.T_s, speeds, vy + cfg.noise_std[0] * noise[0],
                       om + cfg.noise_std[1] * noise[1], de)
    return (log, truth) if return_truth else log
