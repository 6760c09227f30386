from __future__ import annotations

import numpy as np

from .layers import softmax


def labels_to_class(labels: np.ndarray) -> np.ndarray:
    """+1 (flow) -> class 1, -1 (fall) -> class 0."""
    return (np.asarray(labels) > 0).astype(np.int64)


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of a 2-way softmax and its gradient w.r.t. the logits."""
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ValueError(f"expected (batch, 2) logits, got {logits.shape}")
    y = labels_to_class(labels)
    n = len(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_z - z[np.arange(n), y]))
    grad = softmax(logits)
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return loss, grad
