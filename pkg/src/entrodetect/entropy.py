"""Shannon entropy over per-token probability distributions.

Each generation step of a language model yields a probability distribution
over its most likely next tokens (at most the top 100, highest probability
first). The entropy of that distribution, in nats, is the model's
uncertainty at that step; the ordered list of per-step entropies is the
signal the downstream classifier consumes, truncated to the first 64
positions.

Truncating a vocabulary to its top-k tokens discards probability mass, so
the retained probabilities are renormalized to sum to 1 before the entropy
is computed. This choice changes absolute entropy values relative to a
full-vocabulary computation and is deliberate: it makes every input a
valid distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

MAX_TOP_TOKENS = 100
MAX_SEQUENCE_LEN = 64
MAX_ENTROPY = math.log(MAX_TOP_TOKENS)

# Probabilities below this contribute nothing to the entropy sum; avoids
# log underflow without branching on exact zeros.
_PROB_FLOOR = 1e-12
_SUM_TOL = 1e-6


@dataclass(frozen=True)
class EntropySequence:
    """Per-token entropies (nats) for one response, after truncation.

    ``source_len`` is the token count before truncation, so
    ``len(values) == min(source_len, max_len)`` always holds.
    """

    values: np.ndarray
    source_len: int

    def __len__(self) -> int:
        return len(self.values)


def validate_distribution(probs) -> np.ndarray:
    """Check top-k probability invariants and return the renormalized array.

    Rejections (each with its own message): empty input, more than
    MAX_TOP_TOKENS entries, negative probabilities, probabilities above 1,
    non-finite values, and a normalized sum off by more than 1e-6.
    """
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"distribution must be a flat list, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError("distribution is empty")
    if arr.size > MAX_TOP_TOKENS:
        raise ValidationError(
            f"distribution has {arr.size} entries, more than the top-{MAX_TOP_TOKENS} cap"
        )
    if not np.all(np.isfinite(arr)):
        raise ValidationError("distribution contains non-finite probabilities")
    if np.any(arr < 0.0):
        raise ValidationError("distribution contains negative probabilities")
    if np.any(arr > 1.0):
        raise ValidationError("distribution contains probabilities above 1")
    total = float(arr.sum())
    if total <= 0.0:
        raise ValidationError("distribution sums to zero")
    normed = arr / total
    if abs(float(normed.sum()) - 1.0) > _SUM_TOL:
        raise ValidationError(
            f"distribution sum deviates from 1 by more than {_SUM_TOL} after renormalization"
        )
    return normed


def compute_token_entropy(probs) -> float:
    """Shannon entropy -sum(p * ln p) in nats of one token distribution.

    The input is renormalized to sum to 1 first (top-k truncation discards
    mass). Zero probabilities contribute zero, so a one-hot distribution has
    entropy exactly 0; a uniform distribution over k entries has ln(k).
    """
    p = validate_distribution(probs)
    mask = p > _PROB_FLOOR
    pm = p[mask]
    return float(-(pm * np.log(pm)).sum())


def build_entropy_sequence(dists: Sequence, max_len: int = MAX_SEQUENCE_LEN) -> EntropySequence:
    """Map an ordered list of token distributions to an EntropySequence.

    Only the first ``max_len`` distributions are evaluated; ``source_len``
    records the original count.
    """
    if max_len < 1:
        raise ValidationError(f"max_len must be positive, got {max_len}")
    n = len(dists)
    if n == 0:
        raise ValidationError("no token distributions given")
    values = np.array(
        [compute_token_entropy(d) for d in dists[:max_len]], dtype=np.float64
    )
    return EntropySequence(values=values, source_len=n)


def validate_entropy_values(values, *, context: str = "entropy values") -> np.ndarray:
    """Check an ingested entropy list: non-empty, finite, within [0, ln 100]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{context}: must be a non-empty flat list")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{context}: contains non-finite values")
    if np.any(arr < 0.0) or np.any(arr > MAX_ENTROPY + 1e-9):
        raise ValidationError(
            f"{context}: values must lie in [0, ln(100) ~= {MAX_ENTROPY:.6f}]"
        )
    return arr
