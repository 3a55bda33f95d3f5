"""Named parameter tensors and ordered parameter collections."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import DimensionError, ValidationError


class NamedTensor:
    """A rank-1 or rank-2 float64 array with a name and a gradient buffer."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data):
        if not name:
            raise ValidationError("tensor name must be non-empty")
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if arr.ndim not in (1, 2):
            raise DimensionError(
                f"tensor '{name}' must have rank 1 or 2, got shape {arr.shape}"
            )
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"tensor '{name}' has a non-positive dim: {arr.shape}")
        self.name = name
        self.data = arr
        self.grad = np.zeros_like(arr)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"NamedTensor({self.name!r}, shape={self.data.shape})"


class Parameters:
    """Insertion-ordered collection of NamedTensors with unique names."""

    def __init__(self):
        self._tensors: dict[str, NamedTensor] = {}

    def add(self, name: str, data) -> NamedTensor:
        if name in self._tensors:
            raise ValidationError(f"duplicate tensor name: {name!r}")
        t = NamedTensor(name, data)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> NamedTensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[NamedTensor]:
        return iter(self._tensors.values())

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors.keys())

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def total_size(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        """Deep copy of all tensor values (not gradients)."""
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self._tensors.items():
            t.data[...] = snap[name]
