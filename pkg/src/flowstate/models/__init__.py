"""The five flow classifiers behind a common fit/predict/save interface."""

from __future__ import annotations

from pathlib import Path

from ..nn import load_checkpoint
from .deep import (CnnConfig, DeepClassifier, LstmConfig, TrainHistory, build_cnn, build_lstm,
                   train_deep)
from .forest import Forest, ForestClassifier, ForestConfig, forest_fit, forest_predict
from .knn import KnnClassifier, KnnConfig, dedup_windows, knn_classify
from .metrics import Metrics, evaluate
from .svm import SvmClassifier, SvmConfig, SvmModel, svm_fit, svm_predict

MODEL_NAMES = ("cnn", "lstm", "knn", "svm", "forest")


def make_model(name: str, seed: int = 0, **options):
    """Build an unfitted classifier. ``options`` are model-specific settings."""
    if name in ("cnn", "lstm"):
        return DeepClassifier(name, seed=seed, **options)
    if name == "knn":
        return KnnClassifier(KnnConfig(**options), seed)
    if name == "svm":
        options.setdefault("seed", seed)
        return SvmClassifier(SvmConfig(**options), seed)
    if name == "forest":
        options.setdefault("seed", seed)
        return ForestClassifier(ForestConfig(**options), seed)
    raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")


def load_model(path: Path | str):
    meta, arrays = load_checkpoint(path)
    kind = meta.get("model")
    if kind in ("cnn", "lstm"):
        return DeepClassifier.from_checkpoint(meta, arrays)
    if kind == "knn":
        return KnnClassifier.from_checkpoint(meta, arrays)
    if kind == "svm":
        return SvmClassifier.from_checkpoint(meta, arrays)
    if kind == "forest":
        return ForestClassifier.from_checkpoint(meta, arrays)
    raise ValueError(f"{path}: unknown model kind {kind!r}")


__all__ = [
    "CnnConfig", "DeepClassifier", "Forest", "ForestClassifier", "ForestConfig", "KnnClassifier",
    "KnnConfig", "LstmConfig", "MODEL_NAMES", "Metrics", "SvmClassifier", "SvmConfig",
    "SvmModel", "TrainHistory", "build_cnn", "build_lstm", "dedup_windows", "evaluate",
    "forest_fit", "forest_predict", "knn_classify", "load_model", "make_model", "svm_fit",
    "svm_predict", "train_deep",
]
