"""Central-finite-difference gradient checking.

The harness perturbs parameter entries in place, so the loss callable must
be a deterministic function of the current tensor values (freeze any
dropout stream before each evaluation).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping

import numpy as np

from ..errors import ValidationError
from .rng import RngStream
from .tensor import NamedTensor


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic) + abs(numeric))


def grad_check(
    f: Callable[[], float],
    tensors: Iterable[NamedTensor],
    analytic_grads: Mapping[str, np.ndarray],
    *,
    step: float = 1e-5,
    sample_per_tensor: int | None = None,
    rng: RngStream | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    f() evaluates the scalar loss at the tensors' current values;
    analytic_grads maps tensor name -> gradient array computed at that same
    point. With sample_per_tensor set, only that many entries per tensor are
    checked, chosen by rng (exhaustive otherwise).
    """
    tensors = list(tensors)
    if sample_per_tensor is not None and rng is None:
        raise ValidationError("sampled grad_check needs an rng to pick entries")

    worst = 0.0
    for t in tensors:
        g = np.asarray(analytic_grads[t.name], dtype=np.float64).reshape(-1)
        flat = t.data.reshape(-1)
        if sample_per_tensor is None or t.size <= sample_per_tensor:
            idx = range(t.size)
        else:
            idx = sorted(rng.permutation(t.size)[:sample_per_tensor].tolist())
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            lp = f()
            flat[i] = orig - step
            lm = f()
            flat[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise ValidationError(
                    f"non-finite loss while perturbing {t.name}[{i}]"
                )
            numeric = (lp - lm) / (2.0 * step)
            worst = max(worst, relative_error(float(g[i]), numeric))
    return worst
