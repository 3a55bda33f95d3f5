"""Class-weighted cross-entropy over two-class logits."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, ValidationError


def weighted_cross_entropy(logits: np.ndarray, labels, class_weights=(1.3, 0.7)):
    """Mean of w[y_i] * (-log softmax(logits_i)[y_i]) and its exact gradient.

    Weight index 0 applies to the non-hallucinated class, index 1 to the
    hallucinated class. Log-probabilities use max-subtraction so large
    logits cannot overflow.

    Returns (loss, dlogits) with dlogits the gradient of the mean loss.
    """
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise DimensionError(f"logits must be [rows, 2], got {logits.shape}")
    if y.shape != (logits.shape[0],):
        raise DimensionError(
            f"labels shape {y.shape} does not match logits rows {logits.shape[0]}"
        )
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0 or 1")
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (2,) or np.any(w < 0.0):
        raise ValidationError(f"class_weights must be two non-negative values, got {class_weights}")

    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    yi = y.astype(np.intp)
    wy = w[yi]
    loss = float((wy * -logp[np.arange(n), yi]).mean())

    p = np.exp(logp)
    dlogits = p * (wy / n)[:, None]
    dlogits[np.arange(n), yi] -= wy / n
    return loss, dlogits
