"""Central-difference gradient checking for :class:`Network` models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from .layers import ReLU
from .loss import softmax_xent
from .network import Network
from .tensor import Mode


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    n_checked: dict[str, int] = field(default_factory=dict)
    n_skipped: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor); the floor makes 0 vs 0 compare equal."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _probe(net: Network, x, labels):
    """Train-mode loss without dropout, plus the ReLU activation patterns."""
    z, caches = net.logits(x, Mode.TRAIN, None, dropout=False)
    loss = softmax_xent(z, labels)[0]
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss during gradient check")
    masks = [c.data for layer, c in zip(net._body(), caches) if isinstance(layer, ReLU)]
    return loss, masks


def grad_check(net: Network, x: np.ndarray, labels: np.ndarray, eps: float = 1e-5,
               n_coords: int = 200, seed: int = 0, floor: float = 1e-6) -> GradCheckResult:
    """Compare analytic gradients with central differences.

    Samples ``n_coords`` coordinates per parameter tensor (all of them when
    the tensor is smaller). A coordinate whose perturbation flips any ReLU
    is redrawn, since the loss is not differentiable across the kink.
    BatchNorm running statistics are restored afterwards.
    """
    if net.dtype != np.float64:
        raise ValueError("gradient checking needs a float64 network")
    saved_buffers = {k: v.copy() for k, v in net.named_buffers()}
    rng = np.random.default_rng(seed)

    net.zero_grad()
    z, caches = net.logits(x, Mode.TRAIN, None, dropout=False)
    loss, dz = softmax_xent(z, labels)
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss during gradient check")
    net.backward(caches, dz)
    _, base_masks = _probe(net, x, labels)

    result = GradCheckResult(0.0)
    for name, p in net.named_params():
        flat = p.value.reshape(-1)
        analytic = p.grad.reshape(-1).copy()
        want = min(n_coords, flat.size)
        candidates = rng.permutation(flat.size)
        errs = []
        for idx in candidates:
            if len(errs) >= want:
                break
            orig = flat[idx]
            flat[idx] = orig + eps
            lp, mp = _probe(net, x, labels)
            flat[idx] = orig - eps
            lm, mm = _probe(net, x, labels)
            flat[idx] = orig
            kinked = any(not np.array_equal(a, b) for a, b in zip(mp, base_masks)) or \
                any(not np.array_equal(a, b) for a, b in zip(mm, base_masks))
            if kinked:
                result.n_skipped += 1
                continue
            numeric = (lp - lm) / (2 * eps)
            errs.append(float(relative_error(analytic[idx], numeric, floor)))
        worst = max(errs) if errs else 0.0
        result.per_param[name] = worst
        result.n_checked[name] = len(errs)
        result.max_rel_error = max(result.max_rel_error, worst)
    net.zero_grad()
    for k, buf in net.named_buffers():
        buf[...] = saved_buffers[k]
    return result
