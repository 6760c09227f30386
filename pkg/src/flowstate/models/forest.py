"""Bagged Gini decision trees over flattened windows."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..datasets import Dataset
from ..errors import DataError
from ..nn import save_checkpoint


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = 16
    max_features: int | str | None = "sqrt"
    bootstrap: bool = True
    min_samples_split: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    def features_per_split(self, n_features: int) -> int:
        if self.max_features is None:
            return n_features
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        return max(1, min(int(self.max_features), n_features))


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf holding ``value`` (±1)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return self.value[node]
            r, n = rows[inner], node[inner]
            go_left = x[r, feat[inner]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])


def _leaf_value(y01: np.ndarray) -> int:
    # majority; ties go to fall
    return 1 if 2 * int(y01.sum()) > len(y01) else -1


def _best_split(x: np.ndarray, y01: np.ndarray, features: np.ndarray):
    """Best Gini split over ``features``; returns (feature, threshold) or None."""
    n = len(y01)
    sub = x[:, features]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    ys = y01[order]
    left_pos = np.cumsum(ys, axis=0)[:-1].astype(np.float64)   # (n-1, m)
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    right_pos = ys.sum(axis=0) - left_pos
    impurity = (left_pos * (n_left - left_pos) / n_left
                + right_pos * (n_right - right_pos) / n_right)
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)
    k, f = np.unravel_index(int(np.argmin(impurity)), impurity.shape)
    thr = 0.5 * (xs[k, f] + xs[k + 1, f])
    if not thr < xs[k + 1, f]:
        thr = xs[k, f]
    return int(features[f]), float(thr)


def fit_tree(x: np.ndarray, y: np.ndarray, cfg: ForestConfig, rng: np.random.Generator) -> Tree:
    y01 = (y > 0).astype(np.int64)
    n_feat = x.shape[1]
    m = cfg.features_per_split(n_feat)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y01)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y01[idx]
        value[node] = _leaf_value(yn)
        pure = yn.min() == yn.max()
        if pure or len(idx) < cfg.min_samples_split or (
                cfg.max_depth is not None and depth >= cfg.max_depth):
            continue
        feats = rng.choice(n_feat, m, replace=False) if m < n_feat else np.arange(n_feat)
        split = _best_split(x[idx], yn, feats)
        if split is None:
            continue
        f, thr = split
        mask = x[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, idx[~mask], depth + 1))
        stack.append((lnode, idx[mask], depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.int8))


@dataclass
class Forest:
    trees: list[Tree]

    def predict(self, values: np.ndarray) -> np.ndarray:
        x = np.asarray(values, dtype=np.float64).reshape(len(values), -1)
        votes = np.zeros(len(x), dtype=np.int64)
        for t in self.trees:
            votes += t.predict(x)
        return np.where(votes > 0, 1, -1).astype(np.int8)


def forest_fit(train: Dataset, cfg: ForestConfig = ForestConfig()) -> Forest:
    if not len(train):
        raise DataError("forest needs a nonempty training set")
    x = train.flat
    y = train.labels
    rng = np.random.default_rng(cfg.seed)
    trees = []
    for _ in range(cfg.n_trees):
        if cfg.bootstrap:
            idx = rng.integers(0, len(x), len(x))
            trees.append(fit_tree(x[idx], y[idx], cfg, rng))
        else:
            trees.append(fit_tree(x, y, cfg, rng))
    return Forest(trees)


def forest_predict(forest: Forest, values: np.ndarray) -> np.ndarray:
    return forest.predict(values)


class ForestClassifier:
    kind = "forest"

    def __init__(self, config: ForestConfig = ForestConfig(), seed: int = 0):
        self.config = config
        self.seed = seed
        self.forest: Forest | None = None

    def fit(self, train: Dataset, holdout: Dataset | None = None) -> "ForestClassifier":
        self.forest = forest_fit(train, self.config)
        return self

    def predict(self, values: np.ndarray) -> np.ndarray:
        return self.forest.predict(values)

    def save(self, path) -> None:
        arrays = []
        for i, t in enumerate(self.forest.trees):
            for name in ("feature", "threshold", "left", "right", "value"):
                arrays.append((f"{i}.{name}", getattr(t, name)))
        cfg = self.config
        save_checkpoint(path, {"model": "forest", "seed": self.seed,
                               "n_trees": len(self.forest.trees),
                               "config": {"n_trees": cfg.n_trees, "max_depth": cfg.max_depth,
                                          "max_features": cfg.max_features,
                                          "bootstrap": cfg.bootstrap, "seed": cfg.seed}},
                        arrays)

    @classmethod
    def from_checkpoint(cls, meta: dict, arrays: dict) -> "ForestClassifier":
        obj = cls(ForestConfig(**meta["config"]), int(meta["seed"]))
        trees = []
        for i in range(int(meta["n_trees"])):
            trees.append(Tree(arrays[f"{i}.feature"].astype(np.int64),
                              arrays[f"{i}.threshold"],
                              arrays[f"{i}.left"].astype(np.int64),
                              arrays[f"{i}.right"].astype(np.int64),
                              arrays[f"{i}.value"].astype(np.int8)))
        obj.forest = Forest(trees)
        return obj
