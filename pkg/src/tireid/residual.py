"""Residual dynamics learners: the S4 corrector and its MLP / RNN baselines.

All three architectures map a window of ``[v_x, v_y, omega, delta]`` rows to
per-row residuals ``[dv_y, domega]`` (measured next state minus the nominal
one-step prediction).  Inputs are z-scored and targets divided by a per-channel
scale, both taken from the training split and stored with the model.

Gradients are hand-derived.  For the S4 layer the loss is differentiated through
the convolution kernel, which is exactly equivalent to backpropagation through
the unrolled recurrence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import savgol_filter
from scipy.special import erf

from . import dynamics as dyn
from . import ssm
from .errors import ConfigError, ContractError, DomainError, TrainingError

ARCHS = ("s4", "mlp", "rnn")
SCHEMA_VERSION = 1
TARGET_SCALE_FLOOR = 1e-4   # residual units per step; keeps Adam quiet on ~zero targets

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


@dataclass
class ResidualModel:
    """Parameters plus normalization statistics for one residual architecture."""

    kind: str
    params: dict
    in_mean: np.ndarray
    in_std: np.ndarray
    out_scale: np.ndarray
    dropout_rate: float = 0.0
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ARCHS:
            raise ConfigError(f"unknown architecture {self.kind!r}; valid: {', '.join(ARCHS)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        self.in_mean = np.asarray(self.in_mean, dtype=float)
        self.in_std = np.asarray(self.in_std, dtype=float)
        self.out_scale = np.asarray(self.out_scale, dtype=float)
        if np.any(self.in_std <= 0) or np.any(self.out_scale <= 0):
            raise DomainError("normalization scales must be positive")

    def copy(self) -> "ResidualModel":
        return ResidualModel(self.kind, {k: v.copy() for k, v in self.params.items()},
                             self.in_mean.copy(), self.in_std.copy(), self.out_scale.copy(),
                             self.dropout_rate, dict(self.hyper))

    # S4-specific views -----------------------------------------------------
    def A(self) -> np.ndarray:
        return -np.exp(self.params["rho"]) + 1j * self.params["theta"]

    def delta(self) -> np.ndarray:
        return np.exp(self.params["log_delta"])

    def cores(self) -> list[ssm.SsmCore]:
        p = self.params
        A = self.A()
        B = p["B_re"] + 1j * p["B_im"]
        C = p["C_re"] + 1j * p["C_im"]
        return [ssm.SsmCore(A[h], B[h], C[h], float(p["D_f"][h]), float(p["log_delta"][h]))
                for h in range(A.shape[0])]

    def kernels(self, L: int) -> np.ndarray:
        """``(d_model, L)`` real convolution kernels."""
        p = self.params
        A_bar, q = ssm.zoh(self.A(), self.delta())
        W = (p["C_re"] + 1j * p["C_im"]) * q * (p["B_re"] + 1j * p["B_im"])
        return ssm.kernel_from_discrete(A_bar, W, L)


SsmModel = ResidualModel


def init_model(kind: str = "s4", seed: int = 0, d_model: int = 16, N: int = 16, hidden: int = 16,
               T_s: float = 0.01, dropout_rate: float = 0.0, in_mean=None, in_std=None,
               out_scale=None, random_decoder: bool = False) -> ResidualModel:
    """Fresh model.  The read-out starts at zero unless ``random_decoder`` is set,
    so an untrained corrector leaves the nominal model unchanged."""
    rng = np.random.default_rng(seed)
    in_mean = np.zeros(4) if in_mean is None else in_mean
    in_std = np.ones(4) if in_std is None else in_std
    out_scale = np.ones(2) if out_scale is None else out_scale
    if kind == "s4":
        A0 = ssm.hippo_diag_init(N)
        params = {
            "W_enc": rng.normal(0.0, 0.5, (4, d_model)),
            "b_enc": np.zeros(d_model),
            "rho": np.tile(np.log(-A0.real), (d_model, 1)),
            "theta": np.tile(A0.imag, (d_model, 1)),
            "B_re": np.ones((d_model, N)),
            "B_im": np.zeros((d_model, N)),
            "C_re": rng.normal(0.0, math.sqrt(0.5), (d_model, N)),
            "C_im": rng.normal(0.0, math.sqrt(0.5), (d_model, N)),
            "D_f": np.zeros(d_model),
            "log_delta": np.full(d_model, math.log(T_s)),
            "W_dec": np.zeros((d_model, 2)),
            "b_dec": np.zeros(2),
        }
        width = d_model
        hyper = {"d_model": d_model, "N": N, "T_s": T_s}
    elif kind == "mlp":
        params = {
            "W1": rng.normal(0.0, 0.5, (4, hidden)),
            "b1": np.zeros(hidden),
            "W_dec": np.zeros((hidden, 2)),
            "b_dec": np.zeros(2),
        }
        width = hidden
        hyper = {"hidden": hidden}
    elif kind == "rnn":
        params = {
            "W_x": rng.normal(0.0, 0.5, (4, hidden)),
            "W_h": rng.normal(0.0, 0.5 / math.sqrt(hidden), (hidden, hidden)),
            "b_h": np.zeros(hidden),
            "W_dec": np.zeros((hidden, 2)),
            "b_dec": np.zeros(2),
        }
        width = hidden
        hyper = {"hidden": hidden}
    else:
        raise ConfigError(f"unknown architecture {kind!r}; valid: {', '.join(ARCHS)}")
    if random_decoder:
        params["W_dec"] = rng.normal(0.0, 1.0 / math.sqrt(width), (width, 2))
        params["b_dec"] = rng.normal(0.0, 0.1, 2)
    return ResidualModel(kind, params, in_mean, in_std, out_scale, dropout_rate, hyper)


# ---------------------------------------------------------------------------
# forward passes (normalized units)

def _normalize(model, x):
    return (x - model.in_mean) / model.in_std


def _check_window(window):
    x = np.asarray(window, dtype=float)
    if x.ndim not in (2, 3) or x.shape[-1] != 4 or x.shape[-2] < 1:
        raise ContractError(f"window must be (L, 4) or (batch, L, 4), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("window contains non-finite values")
    return x


def _dropout(a, rate, rng):
    if rng is None or rate == 0.0:
        return a, None
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return a * mask, mask


def _s4_forward(model, xn, rng=None, mode="conv"):
    p = model.params
    u = xn @ p["W_enc"] + p["b_enc"]
    L = u.shape[1]
    if mode == "conv":
        K = model.kernels(L)
        s = ssm.causal_conv(K.T[None], u, axis=1) + p["D_f"] * u
    else:
        K = None
        A_bar, q = ssm.zoh(model.A(), model.delta())
        B = p["B_re"] + 1j * p["B_im"]
        C_bar = (p["C_re"] + 1j * p["C_im"]) * q
        h = np.zeros((u.shape[0],) + A_bar.shape, dtype=complex)
        s = np.empty_like(u)
        for k in range(L):
            h = A_bar * h + B * u[:, k, :, None]
            s[:, k] = 2.0 * np.einsum("hn,bhn->bh", C_bar, h).real + p["D_f"] * u[:, k]
    a, mask = _dropout(gelu(s), model.dropout_rate, rng)
    out = a @ p["W_dec"] + p["b_dec"]
    return out, (xn, u, K, s, a, mask)


def _mlp_forward(model, xn, rng=None):
    p = model.params
    z = xn @ p["W1"] + p["b1"]
    a, mask = _dropout(gelu(z), model.dropout_rate, rng)
    return a @ p["W_dec"] + p["b_dec"], (xn, z, a, mask)


def _rnn_forward(model, xn, rng=None):
    p = model.params
    nb, L, _ = xn.shape
    H = p["b_h"].size
    hs = np.zeros((nb, L + 1, H))
    pre_x = xn @ p["W_x"] + p["b_h"]
    for k in range(L):
        hs[:, k + 1] = np.tanh(pre_x[:, k] + hs[:, k] @ p["W_h"])
    a, mask = _dropout(hs[:, 1:], model.dropout_rate, rng)
    return a @ p["W_dec"] + p["b_dec"], (xn, hs, a, mask)


def _forward_norm(model, xn, rng=None, mode="conv"):
    if model.kind == "s4":
        return _s4_forward(model, xn, rng, mode)
    if model.kind == "mlp":
        return _mlp_forward(model, xn, rng)
    return _rnn_forward(model, xn, rng)


def forward(model: ResidualModel, window, mode: str = "conv") -> np.ndarray:
    """Inference: residual predictions in physical units, same leading shape as ``window``.

    ``mode`` only matters for S4 (``"conv"`` or ``"recurrent"``); dropout is off.
    """
    x = _check_window(window)
    squeeze = x.ndim == 2
    xn = _normalize(model, x[None] if squeeze else x)
    out, _ = _forward_norm(model, xn, None, mode)
    out = out * model.out_scale
    return out[0] if squeeze else out


def baseline_forward(kind: str, model: ResidualModel, window) -> np.ndarray:
    if kind not in ("mlp", "rnn") or model.kind != kind:
        raise ConfigError(f"baseline kind {kind!r} does not match model kind {model.kind!r}")
    return forward(model, window)


# ---------------------------------------------------------------------------
# loss and exact gradients

def loss_and_grad(model: ResidualModel, X, Y, rng=None):
    """Mean squared error in normalized target units and its gradient per parameter.

    ``X`` is ``(batch, L, 4)`` raw inputs, ``Y`` ``(batch, L, 2)`` raw residuals.
    Dropout is sampled from ``rng`` when given.
    """
    xn = _normalize(model, np.asarray(X, dtype=float))
    yn = np.asarray(Y, dtype=float) / model.out_scale
    out, cache = _forward_norm(model, xn, rng)
    err = out - yn
    loss = float(np.mean(err * err))
    d_out = 2.0 * err / err.size
    if model.kind == "s4":
        grads = _s4_backward(model, d_out, cache)
    elif model.kind == "mlp":
        grads = _mlp_backward(model, d_out, cache)
    else:
        grads = _rnn_backward(model, d_out, cache)
    return loss, grads


def _readout_backward(p, d_out, a, mask):
    g = {"W_dec": np.einsum("blh,blo->ho", a, d_out), "b_dec": d_out.sum(axis=(0, 1))}
    da = d_out @ p["W_dec"].T
    if mask is not None:
        da = da * mask
    return g, da


def _s4_backward(model, d_out, cache):
    p = model.params
    xn, u, K, s, a, mask = cache
    L = u.shape[1]
    g, da = _readout_backward(p, d_out, a, mask)
    ds = da * gelu_grad(s)

    g["D_f"] = np.einsum("blh,blh->h", ds, u)
    G = ssm.causal_corr(ds, u, axis=1).sum(axis=0).T               # (H, L) dLoss/dK
    du = ssm.causal_corr(ds, K.T[None], axis=1) + p["D_f"] * ds
    g["W_enc"] = np.einsum("blf,blh->fh", xn, du)
    g["b_enc"] = du.sum(axis=(0, 1))

    A = model.A()
    dt = model.delta()
    A_bar, q = ssm.zoh(A, dt)
    B = p["B_re"] + 1j * p["B_im"]
    C = p["C_re"] + 1j * p["C_im"]
    C_bar = C * q
    W = C_bar * B
    P = A_bar[..., None] ** np.arange(L)                            # (H, N, L)
    # complex cotangents follow g_z = dL/dRe z + i dL/dIm z
    g_W = 2.0 * np.einsum("hl,hnl->hn", G, P.conj())
    j = np.arange(1, L)
    g_Abar = 2.0 * W.conj() * np.einsum("hl,hnl->hn", G[:, 1:] * j, P[:, :, :-1].conj())
    g_Cbar = g_W * B.conj()
    g_B = g_W * C_bar.conj()
    g_C = g_Cbar * q.conj()
    g_q = g_Cbar * C.conj()
    g_z = g_Abar * A_bar.conj() + g_q * (A_bar / A).conj()
    g_A = g_z * dt[:, None] + g_q * (-q / A).conj()
    g_dt = np.sum((g_z.conj() * A).real, axis=1)

    g["rho"] = -np.exp(p["rho"]) * g_A.real
    g["theta"] = g_A.imag
    g["log_delta"] = dt * g_dt
    g["B_re"], g["B_im"] = g_B.real, g_B.imag
    g["C_re"], g["C_im"] = g_C.real, g_C.imag
    return g


def _mlp_backward(model, d_out, cache):
    p = model.params
    xn, z, a, mask = cache
    g, da = _readout_backward(p, d_out, a, mask)
    dz = da * gelu_grad(z)
    g["W1"] = np.einsum("blf,blh->fh", xn, dz)
    g["b1"] = dz.sum(axis=(0, 1))
    return g


def _rnn_backward(model, d_out, cache):
    p = model.params
    xn, hs, a, mask = cache
    g, da = _readout_backward(p, d_out, a, mask)
    L = xn.shape[1]
    gW_x = np.zeros_like(p["W_x"])
    gW_h = np.zeros_like(p["W_h"])
    gb = np.zeros_like(p["b_h"])
    carry = np.zeros_like(hs[:, 0])
    for k in range(L - 1, -1, -1):
        dh = da[:, k] + carry
        dpre = dh * (1.0 - hs[:, k + 1] ** 2)
        gW_x += xn[:, k].T @ dpre
        gW_h += hs[:, k].T @ dpre
        gb += dpre.sum(axis=0)
        carry = dpre @ p["W_h"].T
    g.update(W_x=gW_x, W_h=gW_h, b_h=gb)
    return g


# ---------------------------------------------------------------------------
# dataset

@dataclass
class ResidualDataset:
    X: np.ndarray            # (n_windows, L, 4)
    Y: np.ndarray            # (n_windows, L, 2)
    train_idx: np.ndarray
    val_idx: np.ndarray
    in_mean: np.ndarray
    in_std: np.ndarray
    out_scale: np.ndarray

    @property
    def L(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]


def one_step_residuals(log, tires: dyn.TireParams, p: dyn.VehicleParams,
                       dt_inner: float = 0.001) -> np.ndarray:
    """``(n - 1, 2)`` residuals: measured next ``[v_y, omega]`` minus the nominal prediction.

    The nominal prediction integrates over ``T_s`` with RK4 substeps of at most
    ``dt_inner`` so that a lag-free, noise-free plant yields residuals at
    round-off level.
    """
    n_sub = max(1, int(math.ceil(log.T_s / dt_inner - 1e-9)))
    h = log.T_s / n_sub
    vy, om = log.vy[:-1], log.omega[:-1]
    for _ in range(n_sub):
        vy, om = dyn.step_nominal_batch(log.vx[:-1], vy, om, log.delta[:-1], tires, p, h)
    return np.column_stack([log.vy[1:] - vy, log.omega[1:] - om])


def _interleaved_split(n_win, L, val_fraction, n_blocks):
    # Contiguous validation blocks spread over the timeline; windows overlapping
    # a block boundary belong to neither split.
    n_blocks = max(1, min(n_blocks, n_win // (4 * L)))
    edges = np.linspace(0, n_win, n_blocks + 1).round().astype(int)
    train, val = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        n_val = max(1, int(round(val_fraction * (hi - lo))))
        v0 = hi - n_val
        train.append(np.arange(lo, max(v0 - L + 1, lo + 1)))
        val.append(np.arange(v0, hi - (L - 1) if hi < n_win else hi))
    train = np.concatenate(train)
    val = np.concatenate(val)
    if val.size == 0:
        val = np.array([n_win - 1])
    return train, val


def smooth_telemetry(log, window: int, order: int = 3):
    """Zero-phase Savitzky-Golay smoothing of the measured ``v_y`` and ``omega``.

    ``v_x`` and the steering command are left untouched.
    """
    if window % 2 == 0 or window <= order:
        raise ConfigError(f"smoothing window must be odd and exceed {order}, got {window}")
    if window > len(log):
        raise ContractError(f"smoothing window {window} is longer than the log")
    return replace(log, vy=savgol_filter(log.vy, window, order),
                   omega=savgol_filter(log.omega, window, order))


def build_residual_dataset(log, tires: dyn.TireParams, p: dyn.VehicleParams, L: int = 64,
                           val_fraction: float = 0.2, dt_inner: float = 0.001,
                           n_blocks: int = 5, smooth_window: int = 0) -> ResidualDataset:
    """Sliding stride-1 windows over the log with per-row residual targets.

    ``val_fraction`` of each of ``n_blocks`` equal stretches of the timeline is
    held out for validation; statistics come from the training windows only.
    ``smooth_window > 0`` smooths the measured states first
    (:func:`smooth_telemetry`).
    """
    if smooth_window:
        log = smooth_telemetry(log, smooth_window)
    n = len(log)
    if L < 1 or n <= L + 1:
        raise ContractError(f"log of {n} records is too short for windows of length {L}")
    if not 0.0 < val_fraction <= 0.5:
        raise ConfigError("val_fraction must lie in (0, 0.5]")
    e = one_step_residuals(log, tires, p, dt_inner)
    if not np.all(np.isfinite(e)):
        raise DomainError("non-finite residual targets")
    inputs = log.inputs()
    n_win = n - L - 1
    starts = np.arange(n_win)
    idx = starts[:, None] + np.arange(L)
    X = inputs[idx]
    Y = e[idx]
    train_idx, val_idx = _interleaved_split(n_win, L, val_fraction, n_blocks)
    rows = np.zeros(n, dtype=bool)
    for s0 in train_idx:
        rows[s0:s0 + L] = True
    rows_e = rows[:-1]
    in_mean = inputs[rows].mean(axis=0)
    in_std = inputs[rows].std(axis=0)
    in_std = np.where(in_std > 1e-9, in_std, 1.0)
    out_scale = np.maximum(e[rows_e].std(axis=0), TARGET_SCALE_FLOOR)
    return ResidualDataset(X, Y, train_idx, val_idx, in_mean, in_std, out_scale)


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    arch: str = "s4"
    learning_rate: float = 1e-2
    steps: int = 2000
    batch_size: int = 32
    dropout_rate: float = 0.0
    seed: int = 0
    val_fraction: float = 0.2
    window: int = 64
    d_model: int = 16
    state_dim: int = 16
    hidden: int = 16
    eval_every: int = 50
    smooth_window: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"train.arch must be one of {', '.join(ARCHS)}, got {self.arch!r}")
        for name in ("learning_rate", "steps", "batch_size", "window", "d_model", "state_dim",
                     "hidden", "eval_every"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"train.{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("train.dropout_rate must lie in [0, 1)")
        if not 0.0 < self.val_fraction <= 0.5:
            raise ConfigError("train.val_fraction must lie in (0, 0.5]")
        if self.seed < 0:
            raise ConfigError("train.seed must be non-negative")
        if self.smooth_window and (self.smooth_window % 2 == 0 or self.smooth_window < 5):
            raise ConfigError("train.smooth_window must be 0 or an odd integer >= 5")


@dataclass
class LossRecord:
    step: int
    train_loss: float
    val_loss: float


def evaluate(model: ResidualModel, X, Y, batch: int = 256) -> float:
    """Mean squared error in normalized units, dropout off."""
    total, count = 0.0, 0
    for i in range(0, len(X), batch):
        xn = _normalize(model, X[i:i + batch])
        out, _ = _forward_norm(model, xn)
        err = out - Y[i:i + batch] / model.out_scale
        total += float(np.sum(err * err))
        count += err.size
    return total / count


def train(model: ResidualModel | None, dataset: ResidualDataset, cfg: TrainConfig,
          T_s: float = 0.01):
    """Adam on the windowed MSE; returns the best-validation model and the loss history.

    ``model`` None builds a fresh one from ``cfg`` and the dataset statistics.
    """
    if len(dataset.train_idx) == 0:
        raise ContractError("empty training split")
    if model is None:
        model = init_model(cfg.arch, cfg.seed, cfg.d_model, cfg.state_dim, cfg.hidden, T_s,
                           cfg.dropout_rate, dataset.in_mean, dataset.in_std, dataset.out_scale)
    else:
        model = model.copy()
    rng = np.random.default_rng(cfg.seed + 1)
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(v) for k, v in model.params.items()}
    Xv, Yv = dataset.X[dataset.val_idx], dataset.Y[dataset.val_idx]
    best_val = evaluate(model, Xv, Yv)
    best = model.copy()
    history = [LossRecord(0, evaluate(model, dataset.X[dataset.train_idx[:512]],
                                      dataset.Y[dataset.train_idx[:512]]), best_val)]
    running, n_running = 0.0, 0
    batch = min(cfg.batch_size, len(dataset.train_idx))
    for step in range(1, cfg.steps + 1):
        idx = rng.choice(dataset.train_idx, size=batch, replace=False)
        loss, grads = loss_and_grad(model, dataset.X[idx], dataset.Y[idx], rng)
        if not math.isfinite(loss):
            raise TrainingError(f"loss became non-finite at step {step}", step)
        for k, g in grads.items():
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            m_hat = m[k] / (1 - b1 ** step)
            v_hat = v[k] / (1 - b2 ** step)
            model.params[k] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        if model.kind == "s4":
            np.clip(model.params["log_delta"], ssm.LOG_DELTA_RANGE[0] + 1e-6,
                    ssm.LOG_DELTA_RANGE[1] - 1e-6, out=model.params["log_delta"])
        running += loss
        n_running += 1
        if step % cfg.eval_every == 0 or step == cfg.steps:
            val = evaluate(model, Xv, Yv)
            if not math.isfinite(val):
                raise TrainingError(f"validation loss became non-finite at step {step}", step)
            history.append(LossRecord(step, running / n_running, val))
            running, n_running = 0.0, 0
            if val < best_val:
                best_val, best = val, model.copy()
    return best, history


def residual_rmse(model: ResidualModel, dataset: ResidualDataset, split: str = "val") -> float:
    """RMSE in normalized target units over the last row of every window in ``split``."""
    idx = dataset.val_idx if split == "val" else dataset.train_idx
    X, Y = dataset.X[idx], dataset.Y[idx]
    pred = forward(model, X)[:, -1] / dataset.out_scale
    return float(np.sqrt(np.mean((pred - Y[:, -1] / dataset.out_scale) ** 2)))


# ---------------------------------------------------------------------------
# serialization

def _complex_pairs(re, im):
    return np.stack([re, im], axis=-1).tolist()


def model_to_dict(model: ResidualModel) -> dict:
    params = {}
    p = model.params
    for k, val in p.items():
        if k in ("B_re", "C_re"):
            params[k[0]] = _complex_pairs(val, p[k[0] + "_im"])
        elif k in ("B_im", "C_im"):
            continue
        else:
            params[k] = val.tolist()
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": model.kind,
        "hyper": model.hyper,
        "dropout_rate": model.dropout_rate,
        "input_norm": {"mean": model.in_mean.tolist(), "std": model.in_std.tolist()},
        "output_scale": model.out_scale.tolist(),
        "params": params,
    }


def model_from_dict(d: dict) -> ResidualModel:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ContractError(f"unsupported model schema_version {d.get('schema_version')!r}")
    params = {}
    for k, val in d["params"].items():
        arr = np.asarray(val, dtype=float)
        if k in ("B", "C"):
            params[k + "_re"], params[k + "_im"] = arr[..., 0].copy(), arr[..., 1].copy()
        else:
            params[k] = arr
    return ResidualModel(d["kind"], params, d["input_norm"]["mean"], d["input_norm"]["std"],
                         d["output_scale"], d["dropout_rate"], d.get("hyper", {}))


def save_model(model: ResidualModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> ResidualModel:
    return model_from_dict(json.loads(Path(path).read_text()))


class Corrector:
    """Residual prediction for the newest row of a rolling window of at most ``L`` rows.

    For S4 the output is the kernel sum over the window, i.e. the recurrence
    restarted from a zero state ``L`` rows back.
    """

    def __init__(self, model: ResidualModel, L: int):
        self.model = model
        self.L = int(L)
        self._K = model.kernels(self.L) if model.kind == "s4" else None

    def __call__(self, window) -> np.ndarray:
        m = self.model
        x = _normalize(m, np.asarray(window, dtype=float)[-self.L:])
        if m.kind == "s4":
            p = m.params
            u = x @ p["W_enc"] + p["b_enc"]
            s = np.einsum("hj,jh->h", self._K[:, : len(u)], u[::-1]) + p["D_f"] * u[-1]
            out = gelu(s) @ p["W_dec"] + p["b_dec"]
        else:
            out = _forward_norm(m, x[None])[0][0, -1]
        return out * m.out_scale
