"""Derivative-free Nelder-Mead simplex minimization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class NmOptions:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    max_iter: int = 2000
    f_tol: float = 1e-12
    initial_step: tuple | None = None
    penalty_weight: float = 1e3
    restarts: int = 3

    def __post_init__(self):
        for name in ("reflection", "expansion", "contraction", "shrink", "penalty_weight"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"nm.{name} must be positive")
        if not (0 < self.contraction < 1 and 0 < self.shrink < 1):
            raise ConfigError("nm.contraction and nm.shrink must lie in (0, 1)")
        if self.expansion <= self.reflection:
            raise ConfigError("nm.expansion must exceed nm.reflection")
        if self.max_iter < 1:
            raise ConfigError("nm.max_iter must be >= 1")
        if not self.f_tol >= 0:
            raise ConfigError("nm.f_tol must be non-negative")
        if self.restarts < 0:
            raise ConfigError("nm.restarts must be non-negative")


@dataclass
class NmResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    best_history: list = field(default_factory=list)


def initial_simplex(x0, step=None) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if step is None:
        step = np.where(x0 != 0, 0.05 * np.abs(x0), 0.00025)
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    simplex = np.tile(x0, (n + 1, 1))
    simplex[1:] += np.diag(step)
    return simplex


def nelder_mead(objective, x0, opts: NmOptions = NmOptions()) -> NmResult:
    """Minimize ``objective`` from the axis-aligned simplex around ``x0``.

    A pass stops once the objective spread over the simplex drops below
    ``opts.f_tol``.  A pass that still improved the best value by more than
    ``f_tol`` is followed by a fresh simplex around its best vertex (at most
    ``opts.restarts`` times), which undoes premature collapse such as a simplex
    straddling the minimum symmetrically.  ``iterations`` and ``best_history``
    (best vertex value at the start of every iteration) span all passes;
    ``max_iter`` caps the total.
    """
    x = np.asarray(x0, dtype=float)
    f_best = _safe(objective, x)
    total, history = 0, []
    result = None
    for _ in range(opts.restarts + 1):
        result = _pass(objective, x, opts, opts.max_iter - total, strict=result is None)
        total += result.iterations
        history += result.best_history
        improved = result.fun < f_best - max(opts.f_tol, 1e-15)
        if result.fun <= f_best:
            x, f_best = result.x, result.fun
        if not improved or total >= opts.max_iter:
            break
    return NmResult(x.copy(), float(f_best), total, result.converged, history)


def _pass(objective, x0, opts: NmOptions, max_iter: int, strict: bool) -> NmResult:
    simplex = initial_simplex(x0, opts.initial_step)
    fvals = np.array([objective(x) for x in simplex], dtype=float)
    if not np.all(np.isfinite(fvals)):
        if strict:
            raise ContractError("objective is not finite on the initial simplex")
        # restart simplices may poke outside the domain; such vertices are just worst
        fvals = np.where(np.isfinite(fvals), fvals, np.inf)
    n = simplex.shape[1]
    rho, chi, gamma, sigma = opts.reflection, opts.expansion, opts.contraction, opts.shrink
    history = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        history.append(float(fvals[0]))
        if fvals[-1] - fvals[0] <= opts.f_tol:
            converged = True
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + rho * (centroid - worst)
        fr = _safe(objective, xr)
        if fr < fvals[0]:
            xe = centroid + chi * (centroid - worst)
            fe = _safe(objective, xe)
            simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + gamma * (xr - centroid)
            fc = _safe(objective, xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + gamma * (worst - centroid)
            fc = _safe(objective, xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        simplex[1:] = simplex[0] + sigma * (simplex[1:] - simplex[0])
        fvals[1:] = [_safe(objective, x) for x in simplex[1:]]
    best = int(np.argmin(fvals))
    return NmResult(simplex[best].copy(), float(fvals[best]), it, converged, history)


def _safe(objective, x):
    f = objective(x)
    return f if math.isfinite(f) else math.inf
