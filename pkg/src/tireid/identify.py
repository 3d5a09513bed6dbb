"""Closed-loop Magic Formula identification with a learned residual corrector.

One outer iteration:

1. learn the residual of the current nominal model against the telemetry,
2. run a slow virtual steering ramp on the corrected model at constant speed,
3. keep quasi-steady samples, recover axle forces from the yaw/lateral balance,
4. refit each axle's coefficients with bounded Nelder-Mead.

The loop stops when no coefficient moves by more than ``param_tol`` (relative).
"""

from __future__ import annotations

import io
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import root

from . import dynamics as dyn
from . import residual as res
from .dynamics import AxlePacejka, TireParams, VehicleParams
from .errors import (ConfigError, ContractError, DomainError, InstabilityError, StageError,
                     TireIdError)
from .optimize import NmOptions, nelder_mead
from .vision import FrictionPrior, warm_start_D

REPORT_SCHEMA_VERSION = 1
SWEEP_METHODS = ("equilibrium", "settle")
MIN_FIT_POINTS = 8

LOWER = np.array([dyn.B_BOUNDS[0], dyn.C_BOUNDS[0] + 1e-9, 1e-9, dyn.E_BOUNDS[0]])
UPPER = np.array([dyn.B_BOUNDS[1], dyn.C_BOUNDS[1], dyn.D_BOUNDS[1], dyn.E_BOUNDS[1]])


@dataclass(frozen=True)
class SweepConfig:
    """Virtual steering sweep settings.

    The ramp ``0 -> delta_max`` is applied as ``levels`` equal steps.  With
    ``method="equilibrium"`` each level contributes the steady state of the
    corrected model, found by root solving from the previous level's state.
    With ``method="settle"`` the model is integrated in time: each level is held
    for at least ``duration / levels`` and then until ``settle_window``
    consecutive samples are quasi-steady (capped at ``max_level_time``).
    """

    v_x_bar: float | None = None      # None: mean telemetry speed
    delta_max: float = 0.5
    duration: float = 20.0
    T_s: float = 0.01
    settle_window: int = 50
    qss_omega_dot_tol: float = 1e-4
    levels: int = 50
    max_level_time: float = 20.0
    dt_inner: float = 0.001
    method: str = "equilibrium"

    def __post_init__(self):
        if self.v_x_bar is not None and not self.v_x_bar > 1:
            raise ConfigError("sweep.v_x_bar must exceed 1 m/s")
        if not abs(self.delta_max) <= dyn.STEER_LIMIT:
            raise ConfigError("sweep.delta_max exceeds the steering limit")
        if not (self.T_s > 0 and self.duration / self.T_s >= 200):
            raise ConfigError("sweep.duration / sweep.T_s must be >= 200")
        if self.T_s > dyn.MAX_DT:
            raise ConfigError(f"sweep.T_s must not exceed {dyn.MAX_DT}")
        if self.settle_window < 0:
            raise ConfigError("sweep.settle_window must be >= 0")
        if not self.qss_omega_dot_tol > 0:
            raise ConfigError("sweep.qss_omega_dot_tol must be positive")
        if self.levels < 1:
            raise ConfigError("sweep.levels must be >= 1")
        if self.method not in SWEEP_METHODS:
            raise ConfigError(f"sweep.method must be one of {SWEEP_METHODS}")
        if not self.max_level_time >= self.duration / self.levels:
            raise ConfigError("sweep.max_level_time must cover the base hold duration / levels")


@dataclass(frozen=True)
class OuterConfig:
    """Outer-loop stopping rule.

    The loop stops once no coefficient moves by more than ``param_tol``
    (relative) or both axles' normalized force curves move by less than
    ``curve_tol`` RMS on ``|alpha| <= curve_alpha_max``.
    """

    max_outer: int = 10
    param_tol: float = 1e-3
    curve_tol: float = 5e-3
    curve_alpha_max: float = 0.3

    def __post_init__(self):
        if self.max_outer < 1:
            raise ConfigError("outer.max_outer must be >= 1")
        if not self.param_tol > 0:
            raise ConfigError("outer.param_tol must be positive")
        if not self.curve_tol >= 0:
            raise ConfigError("outer.curve_tol must be non-negative")
        if not self.curve_alpha_max > 0:
            raise ConfigError("outer.curve_alpha_max must be positive")


@dataclass
class SweepDataset:
    front_alpha: np.ndarray
    front_fy: np.ndarray
    rear_alpha: np.ndarray
    rear_fy: np.ndarray
    delta_max: float = 0.0
    trajectory: dict = field(default_factory=dict, repr=False)

    def axle(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "front":
            return self.front_alpha, self.front_fy
        if name == "rear":
            return self.rear_alpha, self.rear_fy
        raise ContractError(f"unknown axle {name!r}")

    def __len__(self):
        return self.front_alpha.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("axle,alpha,fy_norm\n")
        for name in ("front", "rear"):
            for a, f in zip(*self.axle(name)):
                buf.write(f"{name},{a!r},{f!r}\n")
        return buf.getvalue()


@dataclass
class FitResult:
    coeffs: AxlePacejka
    loss: float
    nm_iterations: int
    converged: bool


@dataclass
class IdentifyReport:
    initial: TireParams
    iterations: list = field(default_factory=list)
    outer_iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0
    warm_start: dict | None = None
    sweeps: list = field(default_factory=list, repr=False)
    models: list = field(default_factory=list, repr=False)

    @property
    def final(self) -> TireParams:
        return TireParams.from_dict(self.iterations[-1]["tires"]) if self.iterations else self.initial

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "initial": self.initial.as_dict(),
            "warm_start": self.warm_start,
            "outer_iterations": self.outer_iterations,
            "nm_iterations_total": int(sum(it["nm_iterations"]["front"] + it["nm_iterations"]["rear"]
                                           for it in self.iterations)),
            "converged": self.converged,
            "final": self.final.as_dict(),
            "iterations": self.iterations,
        }
        if include_wall_time:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, include_wall_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall_time), indent=2) + "\n"


def steady_state_forces(v_x: float, omega: float, delta: float,
                        p: VehicleParams) -> tuple[float, float]:
    """Axle lateral forces implied by the yaw-rate balance at quasi-steady state."""
    v_x, omega, delta = (np.asarray(a, dtype=float) for a in (v_x, omega, delta))
    cos_d = np.cos(delta)
    if np.any(np.abs(cos_d) <= 0.5):
        raise DomainError("|cos(delta)| must exceed 0.5 for force extraction")
    if np.any(v_x <= 0):
        raise DomainError("v_x must be positive")
    base = p.m * v_x * omega / p.wheelbase
    f_yr = base * p.l_f
    f_yf = base * p.l_r / cos_d
    if f_yr.ndim == 0:
        return float(f_yf), float(f_yr)
    return f_yf, f_yr


def quasi_steady_filter(v_y, omega, cfg: SweepConfig) -> np.ndarray:
    """Indices whose finite-difference yaw and lateral accelerations are small.

    The lateral threshold is ``10 m x`` the yaw threshold; the first
    ``settle_window`` samples are always dropped.
    """
    v_y = np.asarray(v_y, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if v_y.size < 3 or v_y.shape != omega.shape:
        raise ContractError("trajectory needs >= 3 samples with matching channels")
    omega_dot = np.gradient(omega, cfg.T_s)
    vy_dot = np.gradient(v_y, cfg.T_s)
    keep = (np.abs(omega_dot) < cfg.qss_omega_dot_tol) & (np.abs(vy_dot) < 10.0 * cfg.qss_omega_dot_tol)
    keep[: cfg.settle_window] = False
    return np.flatnonzero(keep)


def virtual_sweep(tires: TireParams, residual: res.ResidualModel | None, p: VehicleParams,
                  cfg: SweepConfig, window: int = 64, envelope=None) -> SweepDataset:
    """Stepped steering ramp on the (optionally corrected) nominal model at constant speed.

    One sample step of the corrected model is ``T_s`` of nominal RK4 plus the
    corrector's prediction for the window of recent states.  ``envelope``
    (``((v_y_lo, v_y_hi), (omega_lo, omega_hi))``) bounds the steady states the
    equilibrium continuation may visit, typically the corrector's training
    range.  Raises :class:`InstabilityError` when the model leaves
    ``|v_y| < v_x`` (settle) or when fewer than 8 levels have a steady state
    (equilibrium).
    """
    if cfg.v_x_bar is None:
        raise ConfigError("sweep.v_x_bar must be resolved before simulating")
    v_x = float(cfg.v_x_bar)
    n_sub = max(1, int(math.ceil(cfg.T_s / cfg.dt_inner - 1e-9)))
    h = cfg.T_s / n_sub
    coeffs = dyn._coeffs(tires)
    corrector = res.Corrector(residual, window) if residual is not None else None

    def step(v_y, omega, delta, rows):
        for _ in range(n_sub):
            v_y, omega = dyn._rk4(v_x, v_y, omega, delta, coeffs, p, h)
        if corrector is not None:
            e = corrector(rows)
            v_y += e[0]
            omega += e[1]
        return v_y, omega

    levels = np.linspace(0.0, cfg.delta_max, cfg.levels + 1)[1:]
    if cfg.method == "equilibrium":
        rows = _equilibria(step, v_x, levels, window, envelope)
        keep = np.arange(len(rows))
    else:
        rows = _settle(step, v_x, levels, cfg, window)
        keep = quasi_steady_filter(rows[:, 1], rows[:, 2], cfg)
    vy, om, de = rows[keep, 1], rows[keep, 2], rows[keep, 3]
    a_f, a_r = dyn._slip(v_x, vy, om, de, p.l_f, p.l_r)
    f_zf, f_zr = dyn.axle_loads(p)
    if keep.size:
        f_yf, f_yr = steady_state_forces(v_x, om, de, p)
    else:
        f_yf = f_yr = np.zeros(0)
    traj = {"v_y": rows[:, 1], "omega": rows[:, 2], "delta": rows[:, 3], "kept": keep}
    reached = float(rows[-1, 3]) if cfg.method == "equilibrium" and len(rows) else cfg.delta_max
    return SweepDataset(np.asarray(a_f), np.asarray(f_yf) / f_zf, np.asarray(a_r),
                        np.asarray(f_yr) / f_zr, reached, traj)


def _equilibria(step, v_x, levels, window, envelope=None) -> np.ndarray:
    # Steady states of the sampled map, continued in delta level by level.  At
    # a fold of the branch the continuation switches to pseudo-arclength in
    # (v_y, omega, delta); it ends when delta leaves [0, delta_max], the state
    # leaves |v_y| < v_x or the envelope, or the solver stalls.
    lo = np.array([-v_x, -np.inf])
    hi = np.array([v_x, np.inf])
    if envelope is not None:
        lo = np.maximum(lo, [envelope[0][0], envelope[1][0]])
        hi = np.minimum(hi, [envelope[0][1], envelope[1][1]])

    def gap(v_y, omega, delta):
        nxt = step(v_y, omega, delta, [(v_x, v_y, omega, delta)] * window)
        return [nxt[0] - v_y, nxt[1] - omega]

    def inside(z):
        return bool(np.all(np.isfinite(z[:2])) and np.all(z[:2] > lo) and np.all(z[:2] < hi))

    def solved(sol, z):
        # judged on the residual: hybr reports stalls once xtol is below round-off
        return np.max(np.abs(sol.fun)) < 1e-10 and inside(z)

    out = []
    x = np.zeros(2)
    for delta in levels:
        sol = root(lambda z: gap(z[0], z[1], delta), x, method="hybr", options={"xtol": 1e-13})
        if not solved(sol, sol.x):
            break
        x = sol.x
        out.append(np.array([x[0], x[1], delta]))
    if 2 <= len(out) < len(levels):
        out += _arclength(gap, out[-2], out[-1], float(levels[-1]), 2 * len(levels), inside)
    if len(out) < MIN_FIT_POINTS:
        raise InstabilityError(f"corrected model has no steady state beyond level {len(out)}", len(out))
    return np.array([(v_x, z[0], z[1], z[2]) for z in out])


def _arclength(gap, z_prev, z, delta_max, max_points, inside) -> list:
    ds = float(np.linalg.norm(z - z_prev))
    tangent = (z - z_prev) / ds
    found = []
    while len(found) < max_points:
        for _ in range(4):
            guess = z + ds * tangent

            def system(w, guess=guess):
                return gap(*w) + [float(tangent @ (w - guess))]

            sol = root(system, guess, method="hybr", options={"xtol": 1e-13})
            w = sol.x
            if np.max(np.abs(sol.fun)) < 1e-10 and np.all(np.isfinite(w)):
                break
            ds *= 0.5
        else:
            return found
        if not (0.0 <= w[2] <= delta_max and inside(w)):
            return found
        step_vec = w - z
        tangent = step_vec / np.linalg.norm(step_vec)
        z = w
        found.append(w)
    return found


def _settle(step, v_x, levels, cfg: SweepConfig, window) -> np.ndarray:
    base_hold = max(1, int(round(cfg.duration / cfg.levels / cfg.T_s)))
    max_hold = max(base_hold, int(round(cfg.max_level_time / cfg.T_s)))
    tol_w, tol_v = cfg.qss_omega_dot_tol, 10.0 * cfg.qss_omega_dot_tol
    rows = []
    v_y = omega = 0.0
    n = 0
    for delta in levels:
        calm = 0
        for k in range(max_hold):
            rows.append((v_x, v_y, omega, delta))
            v_y_old, omega_old = v_y, omega
            v_y, omega = step(v_y, omega, delta, rows[-window:])
            n += 1
            if not (math.isfinite(v_y) and math.isfinite(omega)) or abs(v_y) > v_x:
                raise InstabilityError(f"corrected model diverged at sweep step {n}", n)
            quiet = (abs(omega - omega_old) < tol_w * cfg.T_s
                     and abs(v_y - v_y_old) < tol_v * cfg.T_s)
            calm = calm + 1 if quiet else 0
            if k + 1 >= base_hold and calm > cfg.settle_window:
                break
    rows.append((v_x, v_y, omega, levels[-1]))
    return np.asarray(rows)


def telemetry_envelope(log, margin: float = 0.1):
    """Per-channel ``(lo, hi)`` of the recorded ``v_y`` and ``omega``, widened by ``margin`` of the span."""
    out = []
    for ch in (log.vy, log.omega):
        lo, hi = float(np.min(ch)), float(np.max(ch))
        pad = margin * (hi - lo)
        out.append((lo - pad, hi + pad))
    return tuple(out)


def fit_objective(alpha, fy, weight: float):
    alpha = np.asarray(alpha, dtype=float)
    fy = np.asarray(fy, dtype=float)

    def f(x):
        b, c, d, e = x
        err = dyn._magic(alpha, b, c, d, e) - fy
        lo = np.minimum(x - LOWER, 0.0)
        hi = np.maximum(x - UPPER, 0.0)
        return float(np.mean(err * err)) + weight * float(lo @ lo + hi @ hi)

    return f


# Extra (C, E) starting shapes: the shape and curvature factors trade off
# against each other and the loss surface has a second basin near E ~ 0.
SHAPE_STARTS = ((1.3, 0.5), (1.5, 0.9), (1.8, 0.9), (1.5, -1.0), (1.8, 0.5), (2.1, 0.0))


def _fit_from(objective, x, opts: NmOptions):
    r = nelder_mead(objective, x, opts)
    return r.x, r.fun, r.iterations, r.converged


def fit_axle(alpha, fy, init: AxlePacejka, opts: NmOptions = NmOptions(),
             shape_starts=SHAPE_STARTS) -> FitResult:
    """Least-squares Magic Formula fit with bound penalties.

    Nelder-Mead runs from ``init`` and from copies of it with (C, E) replaced
    by each of ``shape_starts``; the lowest objective wins (earliest on ties).
    ``nm_iterations`` counts the winning run only.
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    fy = np.asarray(fy, dtype=float).ravel()
    if alpha.size == 0 or alpha.size != fy.size:
        raise ContractError("fit data must be non-empty with matching alpha / fy")
    if alpha.size < 8:
        raise ContractError(f"fit needs at least 8 points, got {alpha.size}")
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(fy))):
        raise DomainError("fit data must be finite")
    objective = fit_objective(alpha, fy, opts.penalty_weight)
    x0 = init.as_array()
    if np.any(x0 < LOWER) or np.any(x0 > UPPER):
        raise ContractError("initial coefficients outside the fit bounds")
    starts = [x0] + [np.array([x0[0], c, x0[2], e]) for c, e in shape_starts]
    best = None
    for x in starts:
        out = _fit_from(objective, x, opts)
        if best is None or out[1] < best[1]:
            best = out
    x, _, total, converged = best
    x = np.clip(x, LOWER, UPPER)
    coeffs = AxlePacejka.from_array(x)
    err = dyn.pacejka_normalized(alpha, coeffs) - fy
    return FitResult(coeffs, float(np.mean(err * err)), total, converged)


def _relative_change(old: TireParams, new: TireParams) -> float:
    a = np.concatenate([old.front.as_array(), old.rear.as_array()])
    b = np.concatenate([new.front.as_array(), new.rear.as_array()])
    return float(np.max(np.abs(b - a) / np.maximum(np.abs(a), 0.1)))


def identify_iterative(log, p: VehicleParams, init: TireParams, prior: FrictionPrior | None = None,
                       train_cfg: res.TrainConfig = res.TrainConfig(),
                       sweep_cfg: SweepConfig = SweepConfig(), nm_opts: NmOptions = NmOptions(),
                       outer: OuterConfig = OuterConfig(),
                       initial_model: res.ResidualModel | None = None,
                       progress=None) -> IdentifyReport:
    """Alternate residual learning, virtual sweeping and per-axle refitting.

    ``initial_model`` (if given) replaces training in the first iteration.
    ``progress`` is called with each iteration record as it completes.
    """
    t0 = time.perf_counter()
    warm = None
    if prior is not None:
        d0 = warm_start_D(prior)
        init = TireParams(init.front.with_D(d0), init.rear.with_D(d0))
        warm = {"mu_hat": prior.mu_hat, "source": prior.source, "D_initial": d0}
    if sweep_cfg.v_x_bar is None:
        sweep_cfg = replace(sweep_cfg, v_x_bar=float(np.mean(log.vx)))
    envelope = telemetry_envelope(log)
    report = IdentifyReport(initial=init, warm_start=warm)
    current = init
    for it in range(1, outer.max_outer + 1):
        stage = "residual"
        try:
            if it == 1 and initial_model is not None:
                model = initial_model
                ds = res.build_residual_dataset(log, current, p, train_cfg.window,
                                                train_cfg.val_fraction,
                                                smooth_window=train_cfg.smooth_window)
                val_loss = res.evaluate(model, ds.X[ds.val_idx], ds.Y[ds.val_idx])
            else:
                ds = res.build_residual_dataset(log, current, p, train_cfg.window,
                                                train_cfg.val_fraction,
                                                smooth_window=train_cfg.smooth_window)
                model, hist = res.train(None, ds, train_cfg, log.T_s)
                val_loss = min(r.val_loss for r in hist)
            stage = "sweep"
            try:
                sweep = virtual_sweep(current, model, p, sweep_cfg, train_cfg.window, envelope)
            except InstabilityError:
                sweep = virtual_sweep(current, model, p,
                                      replace(sweep_cfg, delta_max=0.5 * sweep_cfg.delta_max),
                                      train_cfg.window, envelope)
            stage = "fit"
            fits = {name: fit_axle(*sweep.axle(name), getattr(current, name), nm_opts)
                    for name in ("front", "rear")}
        except TireIdError as exc:
            raise StageError(stage, it, exc) from exc
        new = TireParams(fits["front"].coeffs, fits["rear"].coeffs)
        change = _relative_change(current, new)
        moved = {k: curve_rmse(getattr(new, k), getattr(current, k), outer.curve_alpha_max)
                 for k in ("front", "rear")}
        record = {
            "iteration": it,
            "tires": new.as_dict(),
            "sweep_loss": 0.5 * (fits["front"].loss + fits["rear"].loss),
            "fit_loss": {k: f.loss for k, f in fits.items()},
            "residual_val_loss": val_loss,
            "nm_iterations": {k: f.nm_iterations for k, f in fits.items()},
            "sweep_points": len(sweep),
            "sweep_delta_max": sweep.delta_max,
            "max_relative_change": change,
            "curve_change": moved,
        }
        report.iterations.append(record)
        report.sweeps.append(sweep)
        report.models.append(model)
        report.outer_iterations = it
        if progress is not None:
            progress(record)
        current = new
        if change < outer.param_tol or max(moved.values()) < outer.curve_tol:
            report.converged = True
            break
    report.wall_time = time.perf_counter() - t0
    return report


def curve_rmse(fitted: AxlePacejka, truth: AxlePacejka, alpha_max: float = 0.3,
               n: int = 601) -> float:
    """RMSE between two normalized force curves on a dense symmetric slip grid."""
    alpha = np.linspace(-alpha_max, alpha_max, n)
    diff = dyn.pacejka_normalized(alpha, fitted) - dyn.pacejka_normalized(alpha, truth)
    return float(np.sqrt(np.mean(diff * diff)))
