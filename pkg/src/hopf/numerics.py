"""Dense/sparse products, activations, Glorot init, Adam, and a finite-difference oracle.

Dense matrices are plain float64 numpy arrays; sparse operands are scipy CSR.
Everything here is deterministic given explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import NumericsError, ShapeError

_ONE_BELOW = np.nextafter(1.0, 0.0)


def spmm(s: sp.spmatrix, d: np.ndarray) -> np.ndarray:
    """Sparse-dense product s @ d."""
    d = np.asarray(d)
    if s.shape[1] != d.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {s.shape} @ {d.shape}")
    return np.asarray(s @ d)


def as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def glorot_init(fan_in: int, fan_out: int, rng_seed) -> np.ndarray:
    """Uniform draws on [-L, L] with L = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ShapeError(f"fans must be >= 1, got ({fan_in}, {fan_out})")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return as_rng(rng_seed).uniform(-limit, limit, size=(fan_in, fan_out))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, clipped to stay strictly inside (0, 1)."""
    y = expit(np.asarray(x, dtype=np.float64))
    return np.clip(y, np.finfo(np.float64).tiny, _ONE_BELOW)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax, computed with row-max subtraction for stability."""
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class AdamState:
    """Per-parameter Adam moments plus the shared hyperparameters."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, lr: float = 1e-2, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            first_moment=np.zeros_like(param),
            second_moment=np.zeros_like(param),
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState):
    """One bias-corrected Adam update, applied to ``param`` in place."""
    if param.shape != grad.shape:
        raise ShapeError(f"param {param.shape} vs grad {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericsError("non-finite gradient passed to adam_step")
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grad
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * grad * grad
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param, state


def finite_diff_grad(loss_fn, param: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar loss with respect to ``param``.

    Deliberately slow and simple; this is the oracle the analytic backward
    passes are checked against.
    """
    if eps <= 0:
        raise NumericsError(f"eps must be positive, got {eps}")
    p = np.array(param, dtype=np.float64)
    grad = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = p[idx]
        p[idx] = orig + eps
        hi = loss_fn(p)
        p[idx] = orig - eps
        lo = loss_fn(p)
        p[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * eps)
    return grad


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability ``rate``, survivors scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise NumericsError(f"dropout rate must be in [0, 1), got {rate}")
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep
