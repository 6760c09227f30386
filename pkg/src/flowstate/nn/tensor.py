from __future__ import annotations

from enum import Enum

import numpy as np

DEFAULT_DTYPE = np.float64


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class Param:
    """Trainable array with its gradient and Adam moment state."""

    __slots__ = ("name", "value", "grad", "m", "v", "step_count")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.name = name
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step_count = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def astype(self, dtype) -> None:
        for attr in ("value", "grad", "m", "v"):
            setattr(self, attr, getattr(self, attr).astype(dtype))

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape}, dtype={self.value.dtype})"
