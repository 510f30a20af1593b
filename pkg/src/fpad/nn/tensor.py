"""Named parameter/buffer container with an optional gradient buffer."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import ShapeError


class Tensor:
    """A contiguous float array plus an optional same-shape gradient.

    Layers own their Tensors; training steps mutate .data in place so views
    held elsewhere stay live.
    """

    __slots__ = ("data", "grad", "name")

    def __init__(self, data: np.ndarray, name: str = ""):
        data = np.ascontiguousarray(data)
        if data.dtype not in (np.float32, np.float64):
            raise TypeError(f"tensor {name or '?'} must be float32/float64, got {data.dtype}")
        self.data = data
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def add_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                self.name or "tensor",
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}",
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def astype(self, dtype) -> "Tensor":
        t = Tensor(self.data.astype(dtype), self.name)
        return t

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"
