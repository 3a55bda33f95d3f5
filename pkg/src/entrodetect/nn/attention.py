"""Single-headed attention pooling over per-position features.

A two-layer scoring network (affine -> tanh -> affine to a scalar) rates
each position; masked positions get score -inf so their softmax weight is
exactly zero. The pooled context is the attention-weighted row sum of the
input features.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, ValidationError


def attention_pool_forward(
    B: np.ndarray,
    mask: np.ndarray,
    W1: np.ndarray,
    b1: np.ndarray,
    w2: np.ndarray,
    b2: np.ndarray,
):
    """B [n, S, d], boolean mask [n, S] -> (context [n, d], weights [n, S], cache)."""
    if B.ndim != 3:
        raise DimensionError(f"attention input must be [n, S, d], got {B.shape}")
    n, S, d = B.shape
    if mask.shape != (n, S):
        raise DimensionError(f"mask shape {mask.shape} vs batch {(n, S)}")
    if W1.shape[0] != d or w2.shape != (W1.shape[1], 1):
        raise DimensionError(
            f"score params W1 {W1.shape} / w2 {w2.shape} vs feature dim {d}"
        )
    if not mask.any(axis=1).all():
        raise ValidationError("attention: a fully masked sequence has no positions to pool")

    u = np.tanh(B @ W1 + b1)  # [n, S, a]
    s = (u @ w2)[:, :, 0] + b2[0]  # [n, S]
    s = np.where(mask, s, -np.inf)
    z = s - s.max(axis=1, keepdims=True)
    e = np.exp(z)  # exp(-inf) = 0 at masked slots
    A = e / e.sum(axis=1, keepdims=True)
    context = np.einsum("ns,nsd->nd", A, B)
    return context, A, (B, u, A, W1, w2)


def attention_pool_backward(dcontext: np.ndarray, cache):
    """Returns (dB, dW1, db1, dw2, db2)."""
    B, u, A, W1, w2 = cache
    n, S, d = B.shape
    a = u.shape[2]

    dA = np.einsum("nd,nsd->ns", dcontext, B)
    dB = A[:, :, None] * dcontext[:, None, :]
    # softmax backward; masked slots have A == 0, so ds vanishes there
    ds = A * (dA - (A * dA).sum(axis=1, keepdims=True))
    du = ds[:, :, None] * w2[:, 0]
    dpre = du * (1.0 - u * u)

    dpre_f = dpre.reshape(n * S, a)
    B_f = B.reshape(n * S, d)
    dW1 = B_f.T @ dpre_f
    db1 = dpre_f.sum(axis=0)
    dw2 = u.reshape(n * S, a).T @ ds.reshape(n * S, 1)
    db2 = np.array([ds.sum()])
    dB += (dpre_f @ W1.T).reshape(n, S, d)
    return dB, dW1, db1, dw2, db2


def attention_pool(B: np.ndarray, mask, W1, b1, w2, b2):
    """Single-sequence form: B [S, d] -> (context [d], weights [S])."""
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2:
        raise DimensionError(f"expected [S, d], got {B.shape}")
    m = np.asarray(mask, dtype=bool).reshape(1, -1)
    ctx, A, _ = attention_pool_forward(B[None, :, :], m, W1, b1, w2, b2)
    return ctx[0], A[0]
