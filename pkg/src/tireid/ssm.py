"""Diagonal structured state-space (S4D-style) building blocks.

Each core is a SISO continuous system ``h' = A h + B u, y = C h + D u`` with a
diagonal complex ``A``.  Real outputs use the conjugate-pair convention
``y = 2 Re(C h) + D u``.  Discretization follows the zero-order hold with the
integration factor folded into ``C``::

    A_bar = exp(dt A),   C_bar = C (exp(dt A) - 1) / A

so the recurrence is ``h_k = A_bar h_{k-1} + B u_k`` and the equivalent
convolution kernel is ``K_k = 2 Re(sum_n C_bar_n A_bar_n^k B_n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DomainError, SingularityError

LOG_DELTA_RANGE = (math.log(1e-5), 0.0)


def hippo_diag_init(N: int) -> np.ndarray:
    """Diagonal-linear HiPPO eigenvalues ``-1/2 + i pi n``, ``n = 0..N-1``."""
    if not isinstance(N, (int, np.integer)) or N < 2 or N % 2:
        raise ConfigError(f"state dimension must be an even integer >= 2, got {N!r}")
    return -0.5 + 1j * np.pi * np.arange(N)


@dataclass(frozen=True)
class SsmCore:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D_f: float = 0.0
    log_delta: float = math.log(0.01)

    def __post_init__(self):
        A, B, C = (np.asarray(v, dtype=complex).ravel() for v in (self.A, self.B, self.C))
        if not (A.size == B.size == C.size) or A.size == 0:
            raise ContractError("A, B and C must share the state dimension")
        if np.any(A.real >= 0):
            raise DomainError("every Re(A_n) must be negative")
        if not LOG_DELTA_RANGE[0] < self.log_delta < LOG_DELTA_RANGE[1]:
            raise DomainError("step size exp(log_delta) must lie in (1e-5, 1)")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def delta(self) -> float:
        return math.exp(self.log_delta)

    @property
    def N(self) -> int:
        return self.A.size


@dataclass(frozen=True)
class DiscreteCore:
    A_bar: np.ndarray
    B: np.ndarray
    C_bar: np.ndarray
    D_f: float


def zoh(A, delta):
    """Elementwise ``(exp(delta A), (exp(delta A) - 1) / A)``; broadcasts."""
    A = np.asarray(A, dtype=complex)
    if np.any(np.abs(A) < 1e-12):
        raise SingularityError("ZOH discretization needs |A_n| >= 1e-12")
    dA = np.asarray(delta)[..., None] * A if np.ndim(delta) else delta * A
    # expm1 keeps the quotient accurate when |delta A| is tiny
    em1 = _expm1c(dA)
    return em1 + 1.0, em1 / A


def _expm1c(z):
    # complex expm1: e^{x+iy} - 1 = expm1(x) cos y - 2 sin^2(y/2) + i e^x sin y
    x, y = z.real, z.imag
    return np.expm1(x) * np.cos(y) - 2.0 * np.sin(0.5 * y) ** 2 + 1j * np.exp(x) * np.sin(y)


def discretize(core: SsmCore) -> tuple[np.ndarray, np.ndarray]:
    A_bar, q = zoh(core.A, core.delta)
    return A_bar, core.C * q


def discrete(core: SsmCore) -> DiscreteCore:
    A_bar, C_bar = discretize(core)
    return DiscreteCore(A_bar, core.B, C_bar, float(core.D_f))


def kernel_from_discrete(A_bar, W, L: int) -> np.ndarray:
    """``K_k = 2 Re(sum_n W_n A_bar_n^k)`` for ``k < L``; leading axes broadcast."""
    powers = A_bar[..., None] ** np.arange(L)
    return 2.0 * np.einsum("...n,...nl->...l", W, powers).real


def ssm_kernel(core: SsmCore, L: int) -> np.ndarray:
    if L < 1:
        raise ContractError("kernel length must be >= 1")
    A_bar, C_bar = discretize(core)
    return kernel_from_discrete(A_bar, C_bar * core.B, L)


def causal_conv(kernel, u, axis: int = -1) -> np.ndarray:
    """Causal convolution along ``axis`` via zero-padded FFT; ``kernel`` broadcasts."""
    L = u.shape[axis]
    n = _fft_len(2 * L - 1)
    ku = np.fft.irfft(np.fft.rfft(kernel, n, axis=axis) * np.fft.rfft(u, n, axis=axis), n, axis=axis)
    return np.take(ku, np.arange(L), axis=axis)


def causal_corr(a, b, axis: int = -1) -> np.ndarray:
    """``r_j = sum_k a_k b_{k-j}`` for ``j < L`` (adjoint of :func:`causal_conv`)."""
    L = a.shape[axis]
    n = _fft_len(2 * L - 1)
    r = np.fft.irfft(np.fft.rfft(a, n, axis=axis) * np.conj(np.fft.rfft(b, n, axis=axis)), n, axis=axis)
    return np.take(r, np.arange(L), axis=axis)


def _fft_len(n):
    return 1 << (n - 1).bit_length()


def conv_apply(kernel, u, D_f: float) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=float)
    u = np.asarray(u, dtype=float)
    if kernel.shape != u.shape:
        raise ContractError(f"kernel length {kernel.shape} does not match input {u.shape}")
    return causal_conv(kernel, u) + D_f * u


def recurrent_step(core: DiscreteCore, h, u: float) -> tuple[np.ndarray, float]:
    """One step ``h' = A_bar h + B u``, ``y = 2 Re(C_bar . h') + D u``."""
    h = np.asarray(h, dtype=complex)
    if h.shape != core.A_bar.shape:
        raise ContractError("state dimension mismatch")
    h_new = core.A_bar * h + core.B * u
    return h_new, float(2.0 * (core.C_bar @ h_new).real + core.D_f * u)


def recurrent_apply(core: DiscreteCore, u) -> np.ndarray:
    h = np.zeros_like(core.A_bar)
    y = np.empty(len(u))
    for k, uk in enumerate(u):
        h, y[k] = recurrent_step(core, h, uk)
    return y
