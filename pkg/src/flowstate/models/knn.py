from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datasets import Dataset
from ..errors import DataError
from ..nn import save_checkpoint


@dataclass(frozen=True)
class KnnConfig:
    k: int = 1
    metric: str = "euclidean"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.metric != "euclidean":
            raise ValueError("only the euclidean metric is supported")


def dedup_windows(ds: Dataset) -> Dataset:
    """Drop windows whose values repeat an earlier window exactly."""
    _, first = np.unique(ds.flat, axis=0, return_index=True)
    return ds[np.sort(first)]


def nearest_indices(train: np.ndarray, queries: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Index of the nearest training row per query; ties go to the lower index.

    Squared distances come from the ``|q|^2 - 2 q.t + |t|^2`` expansion and
    every candidate within rounding slack of the minimum is re-measured
    exactly, so the choice agrees with a direct all-pairs scan.
    """
    train = np.asarray(train, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    tt = np.einsum("ij,ij->i", train, train)
    out = np.empty(len(queries), dtype=np.int64)
    for s in range(0, len(queries), chunk):
        q = queries[s:s + chunk]
        qq = np.einsum("ij,ij->i", q, q)
        d2 = qq[:, None] - 2.0 * (q @ train.T) + tt[None, :]
        dmin = d2.min(axis=1)
        slack = 1e-9 * (qq + tt.max()) + 1e-12
        rows, cols = np.nonzero(d2 <= (dmin + slack)[:, None])
        exact = ((q[rows] - train[cols]) ** 2).sum(axis=1)
        order = np.lexsort((cols, exact, rows))
        rows, cols = rows[order], cols[order]
        first = np.concatenate(([True], rows[1:] != rows[:-1]))
        out[s + rows[first]] = cols[first]
    return out


def knn_classify(train: Dataset, queries: np.ndarray, cfg: KnnConfig = KnnConfig()) -> np.ndarray:
    if not len(train):
        raise DataError("kNN needs a nonempty training set")
    tv = train.flat
    qv = np.asarray(queries, dtype=np.float64).reshape(len(queries), -1)
    if cfg.k == 1:
        return train.labels[nearest_indices(tv, qv)].astype(np.int8)
    k = min(cfg.k, len(train))
    tt = np.einsum("ij,ij->i", tv, tv)
    out = np.empty(len(qv), dtype=np.int8)
    for s in range(0, len(qv), 256):
        q = qv[s:s + 256]
        d2 = np.einsum("ij,ij->i", q, q)[:, None] - 2.0 * (q @ tv.T) + tt[None, :]
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
        votes = train.labels[nn].astype(np.int64).sum(axis=1)
        out[s:s + 256] = np.where(votes > 0, 1, -1)
    return out


class KnnClassifier:
    kind = "knn"

    def __init__(self, config: KnnConfig = KnnConfig(), seed: int = 0):
        self.config = config
        self.seed = seed
        self.train: Dataset | None = None

    def fit(self, train: Dataset, holdout: Dataset | None = None) -> "KnnClassifier":
        if not len(train):
            raise DataError("kNN needs a nonempty training set")
        self.train = train
        return self

    def predict(self, values: np.ndarray) -> np.ndarray:
        return knn_classify(self.train, values, self.config)

    def save(self, path) -> None:
        t = self.train
        save_checkpoint(path, {"model": "knn", "seed": self.seed, "k": self.config.k,
                               "window_shape": list(t.values.shape[1:])},
                        [("values", t.flat), ("labels", t.labels), ("t_end_ds", t.t_end_ds),
                         ("player", t.player)])

    @classmethod
    def from_checkpoint(cls, meta: dict, arrays: dict) -> "KnnClassifier":
        from ..preprocess import WindowSet

        obj = cls(KnnConfig(k=int(meta["k"])), int(meta["seed"]))
        shape = tuple(meta["window_shape"])
        obj.train = WindowSet(arrays["values"].reshape(-1, *shape), arrays["labels"],
                              arrays["t_end_ds"], arrays["player"])
        return obj
