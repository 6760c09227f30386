from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    """Accuracy plus a confusion matrix; rows are truth, columns predictions,
    index 0 = fall (-1), index 1 = flow (+1)."""

    accuracy: float
    confusion: np.ndarray
    counts: dict

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist(),
                "counts": self.counts}


def evaluate(predictions, truth) -> Metrics:
    p = np.asarray(predictions)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} predictions vs {t.shape} labels")
    if p.size == 0:
        raise ValueError("cannot evaluate an empty prediction set")
    pi = (p > 0).astype(int)
    ti = (t > 0).astype(int)
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (ti, pi), 1)
    acc = float(np.trace(cm) / cm.sum())
    counts = {"fall": int(cm[0].sum()), "flow": int(cm[1].sum()),
              "pred_fall": int(cm[:, 0].sum()), "pred_flow": int(cm[:, 1].sum())}
    return Metrics(acc, cm, counts)
