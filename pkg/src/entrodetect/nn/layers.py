"""Dense-layer building blocks with exact analytic backward passes.

Everything is float64 and functional: each forward returns (output, cache)
and the matching backward consumes (upstream_grad, cache). Shapes follow
the x @ W + b convention with W stored as [in, out].
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from ..errors import DimensionError, ValidationError
from .rng import RngStream

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh-based form: stable for large |x| and faster than exp-based expit
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# affine


def affine_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """out = x @ W + b for x [rows, in], W [in, out], b [out]."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(
            f"affine shape mismatch: x {np.shape(x)} vs W {np.shape(W)}"
        )
    if b.shape != (W.shape[1],):
        raise DimensionError(
            f"affine bias shape {np.shape(b)} does not match W {np.shape(W)}"
        )
    out = x @ W + b
    return out, (x, W)


def affine_backward(dout: np.ndarray, cache):
    x, W = cache
    dx = dout @ W.T
    dW = x.T @ dout
    db = dout.sum(axis=0)
    return dx, dW, db


# ---------------------------------------------------------------------------
# layer norm (normalizes over the last axis)


def layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5):
    if eps <= 0.0:
        raise ValidationError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias shape {gain.shape}/{bias.shape} vs feature dim {d}"
        )
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)  # 1/d normalization
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gain * xhat + bias
    return out, (xhat, inv_std, gain)


def layer_norm_backward(dout: np.ndarray, cache):
    xhat, inv_std, gain = cache
    d = xhat.shape[-1]
    dxhat = dout * gain
    # dx = (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) / std
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv_std
    axes = tuple(range(dout.ndim - 1))
    dgain = (dout * xhat).sum(axis=axes)
    dbias = dout.sum(axis=axes)
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# activations


def gelu(x):
    """Exact GELU x * Phi(x) with Phi the standard normal CDF (via erf)."""
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_forward(x: np.ndarray):
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * phi, (x, phi)


def gelu_backward(dout: np.ndarray, cache):
    x, phi = cache
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return dout * (phi + x * pdf)


def relu_forward(x: np.ndarray):
    out = np.maximum(x, 0.0)
    return out, (x > 0.0)


def relu_backward(dout: np.ndarray, cache):
    return dout * cache


# ---------------------------------------------------------------------------
# batch norm (normalizes over axis 0)


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    __slots__ = ("mean", "var")

    def __init__(self, dim: int):
        self.mean = np.zeros(dim, dtype=np.float64)
        self.var = np.ones(dim, dtype=np.float64)


def batch_norm_forward(
    x: np.ndarray,
    gain: np.ndarray,
    bias: np.ndarray,
    state: BatchNormState,
    mode: str,
    momentum: float = 0.1,
    eps: float = 1e-5,
):
    """Train mode normalizes by the batch statistics (population variance)
    and folds them into the running stats; eval mode uses the stored stats.
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim != 2 or x.shape[1] != gain.shape[0]:
        raise DimensionError(
            f"batch_norm shape mismatch: x {np.shape(x)} vs gain {np.shape(gain)}"
        )
    if mode == "train":
        if x.shape[0] < 2:
            raise ValidationError(
                "batch_norm in train mode needs at least 2 rows (variance of a "
                "single row is undefined)"
            )
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        state.mean *= 1.0 - momentum
        state.mean += momentum * mean
        state.var *= 1.0 - momentum
        state.var += momentum * var
    else:
        mean = state.mean
        var = state.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gain * xhat + bias
    return out, (xhat, inv_std, gain, mode)


def batch_norm_backward(dout: np.ndarray, cache):
    xhat, inv_std, gain, mode = cache
    dxhat = dout * gain
    if mode == "train":
        m1 = dxhat.mean(axis=0)
        m2 = (dxhat * xhat).mean(axis=0)
        dx = (dxhat - m1 - xhat * m2) * inv_std
    else:
        dx = dxhat * inv_std
    dgain = (dout * xhat).sum(axis=0)
    dbias = dout.sum(axis=0)
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# dropout (inverted: survivors scaled by 1/(1-rate) at train time)


def dropout_forward(x: np.ndarray, rate: float, mode: str, rng: RngStream | None = None):
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValidationError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValidationError("dropout in train mode needs an RngStream")
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    mask = keep.astype(np.float64) * scale
    return x * mask, mask


def dropout_backward(dout: np.ndarray, cache):
    if cache is None:
        return dout
    return dout * cache
