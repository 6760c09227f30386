from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .layers import BatchNorm, Dropout, Layer, SoftmaxOut
from .loss import softmax_xent
from .tensor import DEFAULT_DTYPE, Mode, Param


class Network:
    """A stack of layers ending in :class:`SoftmaxOut`."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], name: str = "net",
                 seed: int | None = None, dtype=DEFAULT_DTYPE):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.name = name
        self.seed = seed
        self.dtype = np.dtype(dtype)

    # -- parameters -----------------------------------------------------------

    def named_params(self) -> list[tuple[str, Param]]:
        return [(f"{i}.{layer.kind}.{p.name}", p)
                for i, layer in enumerate(self.layers) for p in layer.params()]

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{layer.kind}.{k}", v)
                for i, layer in enumerate(self.layers) for k, v in layer.buffers().items()]

    def n_params(self, include_batchnorm: bool = True) -> int:
        return sum(p.size for layer in self.layers for p in layer.params()
                   if include_batchnorm or not isinstance(layer, BatchNorm))

    def state(self) -> dict[str, np.ndarray]:
        out = {k: p.value.copy() for k, p in self.named_params()}
        out.update({k: v.copy() for k, v in self.named_buffers()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.named_params():
            p.value[...] = state[k]
        for k, buf in self.named_buffers():
            buf[...] = state[k]

    def astype(self, dtype) -> "Network":
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            for p in layer.params():
                p.astype(self.dtype)
            if isinstance(layer, BatchNorm):
                layer.running_mean = layer.running_mean.astype(self.dtype)
                layer.running_var = layer.running_var.astype(self.dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    # -- passes --------------------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.name} input", ("B", *self.input_shape), x.shape)
        return np.asarray(x, dtype=self.dtype)

    def _body(self) -> list[Layer]:
        if self.layers and isinstance(self.layers[-1], SoftmaxOut):
            return self.layers[:-1]
        return self.layers

    def logits(self, x, mode: Mode = Mode.EVAL, rng=None, dropout: bool = True):
        """Forward through every layer but the softmax; returns (logits, caches)."""
        h = self._check_input(x)
        caches = []
        for layer in self._body():
            r = rng if (dropout and isinstance(layer, Dropout)) else None
            h, cache = layer.forward(h, mode, r)
            caches.append(cache)
        return h, caches

    def forward(self, x, mode: Mode = Mode.EVAL, rng=None) -> np.ndarray:
        """Class probabilities ``(B, 2)``: column 0 is fall, column 1 is flow."""
        z, _ = self.logits(x, mode, rng)
        return self.layers[-1].forward(z, mode)[0]

    def backward(self, caches, dz: np.ndarray) -> np.ndarray:
        for layer, cache in zip(reversed(self._body()), reversed(caches)):
            dz = layer.backward(cache, dz)
        return dz

    def loss_and_grad(self, x, labels, rng=None, dropout: bool = True) -> float:
        """Train-mode forward + backward; gradients are accumulated into params."""
        z, caches = self.logits(x, Mode.TRAIN, rng, dropout)
        loss, dz = softmax_xent(z, labels)
        self.backward(caches, dz)
        return loss

    def loss(self, x, labels, mode: Mode = Mode.TRAIN, dropout: bool = False) -> float:
        z, _ = self.logits(x, mode, None, dropout)
        return softmax_xent(z, labels)[0]

    def predict(self, x, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode ±1 predictions."""
        out = np.empty(len(x), dtype=np.int8)
        for i in range(0, len(x), batch_size):
            z, _ = self.logits(x[i:i + batch_size], Mode.EVAL)
            out[i:i + batch_size] = np.where(z[:, 1] > z[:, 0], 1, -1)
        return out
