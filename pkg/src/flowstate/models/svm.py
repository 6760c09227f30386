"""Soft-margin RBF SVM trained by sequential minimal optimization.

Working pairs are chosen with second-order information (maximal violating
``i``, then the ``j`` giving the largest objective decrease), and the pair
update clips analytically to the box ``[0, C]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..datasets import Dataset
from ..errors import ConvergenceError, DataError
from ..nn import save_checkpoint

log = logging.getLogger(__name__)

TAU = 1e-12


@dataclass(frozen=True)
class SvmConfig:
    gamma: float = 1.0 / 12.0
    C: float = 1000.0
    tol: float = 1e-3
    max_iter: int = 1_000_000
    max_train: int | None = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.gamma <= 0 or self.C <= 0:
            raise ValueError("gamma and C must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * |a_i - b_j|^2) on flattened rows."""
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = np.maximum(aa[:, None] - 2.0 * (a @ b.T) + bb[None, :], 0.0)
    return np.exp(-gamma * d2)


@dataclass
class SvmSolution:
    alpha: np.ndarray
    b: float
    gradient: np.ndarray
    iterations: int
    converged: bool
    dual_objective: float
    violation: float


@dataclass
class SvmModel:
    support: np.ndarray            # support vectors, flattened
    coef: np.ndarray               # alpha_i * y_i
    b: float
    gamma: float
    C: float
    n_train: int = 0
    solution: SvmSolution | None = field(default=None, repr=False)

    def decision(self, values: np.ndarray, chunk: int = 2048) -> np.ndarray:
        x = np.asarray(values, dtype=np.float64).reshape(len(values), -1)
        out = np.empty(len(x))
        for s in range(0, len(x), chunk):
            out[s:s + chunk] = rbf_kernel(x[s:s + chunk], self.support, self.gamma) @ self.coef
        return out + self.b


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    """sum(alpha) - 1/2 alpha^T Q alpha with Q = (y y^T) * K (to be maximized)."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def smo_solve(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3,
              max_iter: int = 1_000_000) -> SvmSolution:
    """Solve the soft-margin dual for a precomputed kernel matrix."""
    n = len(y)
    y = y.astype(np.float64)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a^T Q a - e^T a
    diag = np.diag(K).copy()
    it = 0
    violation = np.inf
    converged = False
    pos = y > 0
    while it < max_iter:
        score = -y * grad
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        if not up.any() or not low.any():
            converged = True
            violation = 0.0
            break
        s_up = np.where(up, score, -np.inf)
        i = int(np.argmax(s_up))
        g_max = s_up[i]
        s_low = np.where(low, score, np.inf)
        violation = g_max - s_low.min()
        if violation < tol:
            converged = True
            break
        ki = K[i]
        diff = g_max - score
        quad = diag[i] + diag - 2.0 * ki
        quad = np.where(quad > 0, quad, TAU)
        gain = np.where(low & (diff > 0), -(diff * diff) / quad, np.inf)
        j = int(np.argmin(gain))
        kj = K[j]
        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        if yi != yj:
            q = diag[i] + diag[j] + 2.0 * (yi * yj * ki[j])
            q = q if q > 0 else TAU
            delta = (-grad[i] - grad[j]) / q
            d = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if d > 0:
                if aj < 0:
                    aj, ai = 0.0, d
            elif ai < 0:
                ai, aj = 0.0, -d
            if d > 0:
                if ai > C:
                    ai, aj = C, C - d
            elif aj > C:
                aj, ai = C, C + d
        else:
            q = diag[i] + diag[j] - 2.0 * (yi * yj * ki[j])
            q = q if q > 0 else TAU
            delta = (grad[i] - grad[j]) / q
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        # grad += Q[:, i] * d_ai + Q[:, j] * d_aj, Q[:, i] = y * y_i * K[:, i]
        grad += y * (yi * (ai - ai_old) * ki + yj * (aj - aj_old) * kj)
        it += 1
    b = _intercept(alpha, y, grad, C)
    return SvmSolution(alpha, b, grad, it, converged, dual_objective(alpha, y, K),
                       float(violation))


def _intercept(alpha, y, grad, C) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yg[free].mean())
    else:
        pos = y > 0
        at_upper = alpha >= C
        at_lower = alpha <= 0
        ub_mask = (pos & at_upper) | (~pos & at_lower)
        lb_mask = (pos & at_lower) | (~pos & at_upper)
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else 0.0
    return -rho


def primal_objective(alpha, y, K, b, C) -> float:
    ay = alpha * y
    f = K @ ay + b
    return float(0.5 * ay @ K @ ay + C * np.maximum(0.0, 1.0 - y * f).sum())


def kkt_report(alpha: np.ndarray, y: np.ndarray, K: np.ndarray, b: float, C: float,
               tol: float = 1e-3) -> dict:
    """Box, equality and complementary-slackness residuals of a dual solution."""
    y = y.astype(np.float64)
    margin = y * (K @ (alpha * y) + b)
    atol = 1e-8 * C
    free = (alpha > atol) & (alpha < C - atol)
    zero = alpha <= atol
    at_c = alpha >= C - atol
    return {
        "box": float(max(0.0, -alpha.min(), alpha.max() - C)),
        "equality": float(abs(alpha @ y)),
        # alpha = 0 needs margin >= 1, free needs margin = 1, alpha = C needs margin <= 1
        "zero_margin": float(np.max(1.0 - margin[zero], initial=0.0)),
        "free_margin": float(np.max(np.abs(margin[free] - 1.0), initial=0.0)),
        "bound_margin": float(np.max(margin[at_c] - 1.0, initial=0.0)),
        "violations_off_bound": int(np.sum((margin < 1.0 - tol) & ~at_c)),
    }


def svm_fit(train: Dataset, cfg: SvmConfig = SvmConfig()) -> SvmModel:
    labels = train.labels.astype(np.float64)
    if len(np.unique(labels)) < 2:
        raise DataError("SVM training needs both classes")
    x = train.flat
    if cfg.max_train is not None and len(x) > cfg.max_train:
        idx = np.sort(np.random.default_rng(cfg.seed).choice(len(x), cfg.max_train,
                                                              replace=False))
        x, labels = x[idx], labels[idx]
        if len(np.unique(labels)) < 2:
            raise DataError("SVM subsample contains a single class")
    K = rbf_kernel(x, x, cfg.gamma)
    sol = smo_solve(K, labels, cfg.C, cfg.tol, cfg.max_iter)
    if not sol.converged:
        gap = primal_objective(sol.alpha, labels, K, sol.b, cfg.C) - sol.dual_objective
        raise ConvergenceError(f"SMO did not converge in {cfg.max_iter} iterations "
                               f"(violation {sol.violation:.3g}, duality gap {gap:.6g})")
    log.info("svm: %d iterations, %d support vectors", sol.iterations,
             int(np.sum(sol.alpha > 0)))
    sv = sol.alpha > 0
    return SvmModel(x[sv], (sol.alpha * labels)[sv], sol.b, cfg.gamma, cfg.C, len(x), sol)


def svm_predict(model: SvmModel, values: np.ndarray) -> np.ndarray:
    return np.where(model.decision(values) > 0, 1, -1).astype(np.int8)


class SvmClassifier:
    kind = "svm"

    def __init__(self, config: SvmConfig = SvmConfig(), seed: int = 0):
        self.config = config
        self.seed = seed
        self.model: SvmModel | None = None

    def fit(self, train: Dataset, holdout: Dataset | None = None) -> "SvmClassifier":
        self.model = svm_fit(train, self.config)
        return self

    def predict(self, values: np.ndarray) -> np.ndarray:
        return svm_predict(self.model, values)

    def save(self, path) -> None:
        m = self.model
        save_checkpoint(path, {"model": "svm", "seed": self.seed, "gamma": m.gamma, "C": m.C,
                               "b": m.b, "n_train": m.n_train},
                        [("support", m.support), ("coef", m.coef)])

    @classmethod
    def from_checkpoint(cls, meta: dict, arrays: dict) -> "SvmClassifier":
        obj = cls(SvmConfig(gamma=meta["gamma"], C=meta["C"]), int(meta["seed"]))
        obj.model = SvmModel(arrays["support"], arrays["coef"], float(meta["b"]),
                             float(meta["gamma"]), float(meta["C"]), int(meta["n_train"]))
        return obj
