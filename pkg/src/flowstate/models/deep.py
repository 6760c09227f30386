"""CNN and LSTM flow classifiers and their training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..datasets import Dataset, batches
from ..errors import DataError, TrainingError
from ..nn import (BatchNorm, Conv2d, Dense, Dropout, Flatten, Lstm, Network, ReLU, SoftmaxOut,
                  adam_step, build_layer, load_checkpoint, save_checkpoint)
from ..nn.tensor import DEFAULT_DTYPE
from ..preprocess import WINDOW_LEN
from ..session_io import N_CHANNELS

log = logging.getLogger(__name__)

INPUT_SHAPE = (WINDOW_LEN, N_CHANNELS)


@dataclass(frozen=True)
class CnnConfig:
    conv_widths: tuple[int, int, int] = (128, 256, 512)
    first_kernel: tuple[int, int] = (1, 12)
    fc_width: int = 128
    n_classes: int = 2
    conv_dropout: float = 0.25
    fc_dropout: float = 0.5

    def __post_init__(self):
        if len(self.conv_widths) != 3 or min(self.conv_widths) < 1:
            raise ValueError("CNN needs three positive conv widths")
        if self.first_kernel != (1, N_CHANNELS):
            raise ValueError(f"first kernel must span all {N_CHANNELS} channels")
        if self.fc_width < 1 or self.n_classes != 2:
            raise ValueError("invalid CNN head")
        for p in (self.conv_dropout, self.fc_dropout):
            if not 0 <= p < 1:
                raise ValueError("dropout must be in [0, 1)")


@dataclass(frozen=True)
class LstmConfig:
    hidden: int = 512
    layers: int = 1
    fc_width: int = 128
    n_classes: int = 2
    fc_dropout: float = 0.5

    def __post_init__(self):
        if self.layers != 1:
            raise ValueError("only a single recurrent layer is supported")
        if self.hidden < 1 or self.fc_width < 1 or self.n_classes != 2:
            raise ValueError("invalid LSTM config")
        if not 0 <= self.fc_dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


def build_cnn(cfg: CnnConfig = CnnConfig(), seed: int = 0, dtype=DEFAULT_DTYPE) -> Network:
    """conv(1x12)+BN+ReLU -> conv(1x1)+BN+ReLU -> dropout -> conv(1x1)+BN+ReLU
    -> flatten -> dense+ReLU -> dropout -> dense(2) -> softmax."""
    rng = np.random.default_rng(seed)
    w1, w2, w3 = cfg.conv_widths
    layers = [
        Conv2d(1, w1, cfg.first_kernel, rng, dtype), BatchNorm(w1, dtype=dtype), ReLU(),
        Conv2d(w1, w2, (1, 1), rng, dtype), BatchNorm(w2, dtype=dtype), ReLU(),
        Dropout(cfg.conv_dropout),
        Conv2d(w2, w3, (1, 1), rng, dtype), BatchNorm(w3, dtype=dtype), ReLU(),
        Flatten(),
        Dense(WINDOW_LEN * w3, cfg.fc_width, rng, dtype), ReLU(),
        Dropout(cfg.fc_dropout),
        Dense(cfg.fc_width, cfg.n_classes, rng, dtype),
        SoftmaxOut(),
    ]
    return Network(layers, INPUT_SHAPE, "cnn", seed, dtype)


def build_lstm(cfg: LstmConfig = LstmConfig(), seed: int = 0, dtype=DEFAULT_DTYPE) -> Network:
    """LSTM final hidden state -> dense+ReLU -> dropout -> dense(2) -> softmax."""
    rng = np.random.default_rng(seed)
    layers = [
        Lstm(N_CHANNELS, cfg.hidden, rng, dtype),
        Dense(cfg.hidden, cfg.fc_width, rng, dtype), ReLU(),
        Dropout(cfg.fc_dropout),
        Dense(cfg.fc_width, cfg.n_classes, rng, dtype),
        SoftmaxOut(),
    ]
    return Network(layers, INPUT_SHAPE, "lstm", seed, dtype)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    holdout_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    initial_loss: float = float("nan")


def _accuracy(net: Network, ds: Dataset) -> float:
    return float(np.mean(net.predict(ds.values) == ds.labels))


def train_deep(net: Network, train: Dataset, holdout: Dataset, epochs: int = 20, seed: int = 0,
               lr: float = 0.001, batch_size: int = 64, patience: int | None = None,
               target_accuracy: float | None = None) -> tuple[Network, TrainHistory]:
    """Mini-batch Adam on softmax cross-entropy; keeps the best-holdout weights.

    Stops early after ``patience`` epochs without holdout improvement, or as
    soon as holdout accuracy reaches ``target_accuracy``.
    """
    if not len(train) or not len(holdout):
        raise DataError("train and holdout sets must be nonempty")
    rng = np.random.default_rng([seed, 1])
    params = net.params()
    hist = TrainHistory()
    hist.initial_loss = net.loss(train.values[:1024], train.labels[:1024], dropout=False)
    best_acc, best_state, stale = -1.0, None, 0
    for epoch in range(epochs):
        total, count = 0.0, 0
        for b, (xb, yb) in enumerate(batches(train, batch_size, seed, epoch)):
            loss = net.loss_and_grad(xb, yb, rng)
            if not math.isfinite(loss):
                norms = {k: float(np.linalg.norm(p.grad)) for k, p in net.named_params()}
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}; "
                                    f"grad norms {norms}")
            adam_step(params, lr)
            total += loss * len(xb)
            count += len(xb)
        acc = _accuracy(net, holdout)
        hist.train_loss.append(total / count)
        hist.holdout_accuracy.append(acc)
        log.info("%s epoch %d: loss %.4f holdout acc %.4f", net.name, epoch + 1,
                 total / count, acc)
        if acc > best_acc:
            best_acc, best_state, stale = acc, net.state(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
        if target_accuracy is not None and acc >= target_accuracy:
            break
        if patience is not None and stale >= patience:
            break
    net.load_state(best_state)
    return net, hist


def _coerce_config(kind: str, config):
    cfg_cls = CnnConfig if kind == "cnn" else LstmConfig
    if config is None:
        return cfg_cls()
    if isinstance(config, dict):
        return cfg_cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in config.items()})
    return config


class DeepClassifier:
    """Train/predict wrapper around a CNN or LSTM network."""

    def __init__(self, kind: str, seed: int = 0, epochs: int = 20, dtype=np.float32,
                 holdout_fraction: float = 0.1, patience: int | None = None,
                 target_accuracy: float | None = None, config=None):
        if kind not in ("cnn", "lstm"):
            raise ValueError(f"unknown deep model {kind!r}")
        self.kind = kind
        self.seed = seed
        self.epochs = epochs
        self.holdout_fraction = holdout_fraction
        self.patience = patience
        self.target_accuracy = target_accuracy
        self.config = _coerce_config(kind, config)
        builder = build_cnn if kind == "cnn" else build_lstm
        self.net = builder(self.config, seed, np.float64).astype(dtype)
        self.history: TrainHistory | None = None

    def fit(self, train: Dataset, holdout: Dataset | None = None) -> "DeepClassifier":
        if holdout is None:
            rng = np.random.default_rng([self.seed, 2])
            order = rng.permutation(len(train))
            k = max(1, int(len(train) * self.holdout_fraction))
            holdout, train = train[np.sort(order[:k])], train[np.sort(order[k:])]
        self.net, self.history = train_deep(self.net, train, holdout, self.epochs, self.seed,
                                            patience=self.patience,
                                            target_accuracy=self.target_accuracy)
        return self

    def predict(self, values: np.ndarray) -> np.ndarray:
        return self.net.predict(values)

    def save(self, path) -> None:
        meta = {"model": self.kind, "seed": self.seed, "config": asdict(self.config),
                "layers": [layer.spec().to_json() for layer in self.net.layers],
                "input_shape": list(self.net.input_shape)}
        save_checkpoint(path, meta, list(self.net.state().items()))

    @classmethod
    def from_checkpoint(cls, meta: dict, arrays: dict) -> "DeepClassifier":
        obj = cls.__new__(cls)
        obj.kind = meta["model"]
        obj.seed = meta["seed"]
        obj.config = _coerce_config(obj.kind, meta["config"])
        layers = [build_layer(spec) for spec in meta["layers"]]
        obj.net = Network(layers, tuple(meta["input_shape"]), obj.kind, obj.seed)
        obj.net.load_state(arrays)
        obj.history = None
        return obj
