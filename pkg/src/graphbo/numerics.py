"""Dense kernels, activations, the Adam update and SPD solves (float64 throughout)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, lapack


class NonFiniteError(FloatingPointError):
    """A gradient, loss or matrix entry became NaN or infinite."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorization failed; ``minor`` is the 1-based failing leading minor."""

    def __init__(self, minor: int, message: str = ""):
        super().__init__(message or f"matrix is not positive definite (leading minor {minor})")
        self.minor = minor


def _as_mat(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a, b = _as_mat(a), _as_mat(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def add(a, b) -> np.ndarray:
    a, b = _as_mat(a), _as_mat(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} + {b.shape}")
    return a + b


def hadamard(a, b) -> np.ndarray:
    a, b = _as_mat(a), _as_mat(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} * {b.shape}")
    return a * b


def scale(a, s: float) -> np.ndarray:
    return _as_mat(a) * float(s)


def transpose(a) -> np.ndarray:
    return _as_mat(a).T.copy()


ACTIVATIONS = ("identity", "relu", "tanh")


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return x
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(kind: str, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Element-wise derivative at pre-activation ``x``; ``out`` reuses a cached forward value."""
    if kind == "identity":
        return np.ones_like(x)
    if kind == "relu":
        return (x > 0).astype(float)
    if kind == "tanh":
        t = np.tanh(x) if out is None else out
        return 1.0 - t * t
    raise ValueError(f"unknown activation {kind!r}")


def row_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def row_softmax_backward(s: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of :func:`row_softmax` given its output ``s``."""
    return s * (grad_out - np.sum(grad_out * s, axis=-1, keepdims=True))


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One bias-corrected Adam update; returns a new parameter dict and advances ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


def cholesky(k: np.ndarray, jitter_retries: int = 0, jitter_scale: float = 1e-10) -> np.ndarray:
    """Lower Cholesky factor; optionally retry with growing diagonal jitter."""
    k = _as_mat(k)
    if k.shape[0] != k.shape[1]:
        raise ValueError(f"expected a square matrix, got {k.shape}")
    if not np.all(np.isfinite(k)):
        raise NonFiniteError("matrix has non-finite entries")
    base = jitter_scale * float(np.mean(np.diag(k)))
    info = 0
    for attempt in range(jitter_retries + 1):
        kk = k if attempt == 0 else k + (base * 10 ** (attempt - 1)) * np.eye(len(k))
        c, info = lapack.dpotrf(kk, lower=1, clean=1)
        if info == 0:
            return c
    if info < 0:  # pragma: no cover - argument error from LAPACK
        raise ValueError(f"dpotrf argument {-info} invalid")
    raise NotPositiveDefiniteError(int(info))


def solve_spd(k: np.ndarray, b: np.ndarray, chol: np.ndarray | None = None) -> np.ndarray:
    """Solve ``K X = B`` for symmetric positive definite ``K``."""
    c = cholesky(k) if chol is None else chol
    return cho_solve((c, True), np.asarray(b, dtype=float))


def logdet_spd(k: np.ndarray, chol: np.ndarray | None = None) -> float:
    c = cholesky(k) if chol is None else chol
    return float(2.0 * np.sum(np.log(np.diag(c))))
