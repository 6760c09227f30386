"""The seven train/test split regimes and mini-batch iteration."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np

from .errors import DataError
from .preprocess import WindowSet
from .session_io import FLOW

Dataset = WindowSet

REGIMES = ("B-B", "B-P1", "B-P2", "P1-P1", "P1-P2", "P2-P1", "P2-P2")


class SplitMode(str, Enum):
    RANDOM = "random"
    CHRONO = "chrono"


@dataclass(frozen=True)
class SplitSpec:
    regime: str
    seed: int = 0
    mode: SplitMode = SplitMode.RANDOM

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        object.__setattr__(self, "mode", SplitMode(self.mode))


def n_test(n: int) -> int:
    """Floor-rule test count for a 0.9/0.1 split (integer floor, no float error)."""
    return n // 10


def _holdout(ws: WindowSet, mode: SplitMode, rng: np.random.Generator):
    """Split one window set 0.9/0.1; returns (train, test)."""
    k = n_test(len(ws))
    if mode is SplitMode.RANDOM:
        order = rng.permutation(len(ws))
    else:
        order = np.lexsort((ws.player, ws.t_end_ds))
    test_idx = order[:k] if mode is SplitMode.RANDOM else order[len(ws) - k:]
    train_idx = order[k:] if mode is SplitMode.RANDOM else order[:len(ws) - k]
    return ws[np.sort(train_idx)], ws[np.sort(test_idx)]


def make_split(spec: SplitSpec, p1: WindowSet, p2: WindowSet) -> tuple[Dataset, Dataset]:
    if not len(p1) or not len(p2):
        raise DataError("both players need at least one window")
    rng = np.random.default_rng(spec.seed)
    r = spec.regime
    if r == "B-B":
        return _holdout(WindowSet.concat([p1, p2]), spec.mode, rng)
    if r == "P1-P2":
        return p1, p2
    if r == "P2-P1":
        return p2, p1
    if r == "P1-P1":
        return _holdout(p1, spec.mode, rng)
    if r == "P2-P2":
        return _holdout(p2, spec.mode, rng)
    held, other = (p1, p2) if r == "B-P1" else (p2, p1)
    train, test = _holdout(held, spec.mode, rng)
    return WindowSet.concat([train, other]), test


def class_balance(ds: Dataset) -> float:
    if len(ds) == 0:
        raise DataError("empty dataset")
    return float(np.mean(ds.labels == FLOW))


def batches(ds: Dataset, batch_size: int = 64, seed: int = 0,
            epoch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch of shuffled ``(inputs, labels)`` batches; last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(ds))
    for i in range(0, len(ds), batch_size):
        idx = order[i:i + batch_size]
        yield ds.values[idx], ds.labels[idx]
