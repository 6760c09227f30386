"""Layers with explicit forward/backward passes.

Image-like tensors are channels-last: ``(batch, height, width, channels)``.
Only kernels of height 1 are supported, which covers the (1, 12) and (1, 1)
convolutions the classifiers need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError, StaleCacheError
from .tensor import DEFAULT_DTYPE, Mode, Param

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    hyper: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.hyper}


class Cache:
    __slots__ = ("layer", "data", "used")

    def __init__(self, layer, data):
        self.layer = layer
        self.data = data
        self.used = False


def _sigmoid(z):
    # tanh form avoids overflow in exp for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Layer:
    kind = "Layer"

    def params(self) -> list[Param]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def hyper(self) -> dict[str, Any]:
        return {}

    def spec(self) -> LayerSpec:
        return LayerSpec(self.kind, self.hyper())

    def forward(self, x, mode: Mode = Mode.TRAIN, rng=None):
        raise NotImplementedError

    def backward(self, cache: Cache, dy):
        raise NotImplementedError

    def _cache(self, data) -> Cache:
        return Cache(self, data)

    def _open(self, cache: Cache | None):
        if cache is None:
            raise StaleCacheError(f"{self.kind}.backward called without a cache")
        if cache.layer is not self:
            raise StaleCacheError(f"{self.kind}.backward got a cache from another layer")
        if cache.used:
            raise StaleCacheError(f"{self.kind}.backward cache already consumed")
        cache.used = True
        return cache.data


class Dense(Layer):
    kind = "Dense"

    def __init__(self, n_in: int, n_out: int, rng=None, dtype=DEFAULT_DTYPE):
        if n_in < 1 or n_out < 1:
            raise ValueError("Dense sizes must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = math.sqrt(6.0 / n_in)
        self.n_in, self.n_out = n_in, n_out
        self.weight = Param(rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype), "weight")
        self.bias = Param(np.zeros(n_out, dtype=dtype), "bias")

    def params(self):
        return [self.weight, self.bias]

    def hyper(self):
        return {"n_in": self.n_in, "n_out": self.n_out}

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError("Dense input", ("B", self.n_in), x.shape)
        return x @ self.weight.value + self.bias.value, self._cache(x)

    def backward(self, cache, dy):
        x = self._open(cache)
        self.weight.grad += x.T @ dy
        self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.value.T


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        mask = x > 0
        return x * mask, self._cache(mask)

    def backward(self, cache, dy):
        return dy * self._open(cache)


class Dropout(Layer):
    """Inverted dropout; identity in eval mode or when ``rng`` is None."""

    kind = "Dropout"

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError("drop rate must be in [0, 1)")
        self.p = p

    def hyper(self):
        return {"p": self.p}

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        if mode is Mode.EVAL or rng is None or self.p == 0.0:
            return x, self._cache(None)
        dt = np.dtype(np.float32 if x.dtype == np.float32 else np.float64)
        keep = rng.random(x.shape, dtype=dt) >= self.p
        mask = keep.astype(dt) / dt.type(1.0 - self.p)
        return x * mask, self._cache(mask)

    def backward(self, cache, dy):
        mask = self._open(cache)
        return dy if mask is None else dy * mask


class Flatten(Layer):
    kind = "Flatten"

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        return x.reshape(len(x), -1), self._cache(x.shape)

    def backward(self, cache, dy):
        return dy.reshape(self._open(cache))


class Conv2d(Layer):
    """2-D convolution with a ``(1, kw)`` kernel, stride 1, no padding.

    A 3-D input ``(B, H, W)`` is accepted when ``in_channels == 1``.
    """

    kind = "Conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel=(1, 1), rng=None,
                 dtype=DEFAULT_DTYPE):
        kh, kw = kernel
        if kh != 1:
            raise ValueError("only kernels of height 1 are supported")
        if min(in_channels, out_channels, kw) < 1:
            raise ValueError("Conv2d sizes must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kw
        bound = math.sqrt(6.0 / fan_in)
        self.in_channels, self.out_channels, self.kw = in_channels, out_channels, kw
        self.weight = Param(rng.uniform(-bound, bound, (kw, in_channels, out_channels))
                            .astype(dtype), "weight")
        self.bias = Param(np.zeros(out_channels, dtype=dtype), "bias")

    def params(self):
        return [self.weight, self.bias]

    def hyper(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": [1, self.kw]}

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        squeeze = False
        if x.ndim == 3 and self.in_channels == 1:
            x = x[..., None]
            squeeze = True
        if x.ndim != 4 or x.shape[3] != self.in_channels or x.shape[2] < self.kw:
            raise ShapeError("Conv2d input", ("B", "H", f">={self.kw}", self.in_channels),
                             x.shape)
        b, h, w, c = x.shape
        wo = w - self.kw + 1
        if self.kw == 1:
            cols = x.reshape(-1, c)
        else:
            # (B, H, Wo, C, kw) -> (B, H, Wo, kw, C)
            cols = sliding_window_view(x, self.kw, axis=2).transpose(0, 1, 2, 4, 3)
            cols = cols.reshape(-1, self.kw * c)
        wmat = self.weight.value.reshape(-1, self.out_channels)
        y = (cols @ wmat + self.bias.value).reshape(b, h, wo, self.out_channels)
        return y, self._cache((cols, x.shape, squeeze))

    def backward(self, cache, dy):
        cols, shape, squeeze = self._open(cache)
        b, h, w, c = shape
        wo = w - self.kw + 1
        dy2 = dy.reshape(-1, self.out_channels)
        self.weight.grad += (cols.T @ dy2).reshape(self.weight.shape)
        self.bias.grad += dy2.sum(axis=0)
        dcols = (dy2 @ self.weight.value.reshape(-1, self.out_channels).T)
        if self.kw == 1:
            dx = dcols.reshape(shape)
        else:
            dcols = dcols.reshape(b, h, wo, self.kw, c)
            dx = np.zeros(shape, dtype=dy.dtype)
            for k in range(self.kw):
                dx[:, :, k:k + wo, :] += dcols[:, :, :, k, :]
        return dx[..., 0] if squeeze else dx


class BatchNorm(Layer):
    """Per-channel normalization over every axis but the last."""

    kind = "BatchNorm"

    def __init__(self, num_features: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM,
                 dtype=DEFAULT_DTYPE):
        if num_features < 1:
            raise ValueError("BatchNorm needs at least one feature")
        self.num_features, self.eps, self.momentum = num_features, eps, momentum
        self.gamma = Param(np.ones(num_features, dtype=dtype), "gamma")
        self.beta = Param(np.zeros(num_features, dtype=dtype), "beta")
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def hyper(self):
        return {"num_features": self.num_features, "eps": self.eps, "momentum": self.momentum}

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        if x.shape[-1] != self.num_features:
            raise ShapeError("BatchNorm input", ("...", self.num_features), x.shape)
        flat = x.reshape(-1, self.num_features)
        if mode is Mode.TRAIN:
            n = len(flat)
            mean = flat.mean(axis=0)
            var = flat.var(axis=0)
            m = self.momentum
            self.running_mean *= 1 - m
            self.running_mean += m * mean
            self.running_var *= 1 - m
            self.running_var += m * var * (n / max(n - 1, 1))
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (flat - mean) * inv_std
        y = xhat * self.gamma.value + self.beta.value
        return y.reshape(x.shape), self._cache((xhat, inv_std, x.shape, mode))

    def backward(self, cache, dy):
        xhat, inv_std, shape, mode = self._open(cache)
        dy = dy.reshape(-1, self.num_features)
        self.gamma.grad += (dy * xhat).sum(axis=0)
        self.beta.grad += dy.sum(axis=0)
        dxhat = dy * self.gamma.value
        if mode is Mode.EVAL:
            return (dxhat * inv_std).reshape(shape)
        n = len(dy)
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                              - xhat * (dxhat * xhat).sum(axis=0))
        return dx.reshape(shape)


class Lstm(Layer):
    """Single-layer LSTM over ``(B, T, D)``; returns the final hidden state.

    Gate order in the packed weight is input, forget, cell, output. The
    weight stacks the input rows (D) over the recurrent rows (H).
    """

    kind = "Lstm"

    def __init__(self, input_size: int, hidden: int, rng=None, dtype=DEFAULT_DTYPE,
                 forget_bias: float = 1.0):
        if input_size < 1 or hidden < 1:
            raise ValueError("Lstm sizes must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(hidden)
        self.input_size, self.hidden = input_size, hidden
        self.weight = Param(rng.uniform(-bound, bound, (input_size + hidden, 4 * hidden))
                            .astype(dtype), "weight")
        bias = np.zeros(4 * hidden, dtype=dtype)
        bias[hidden:2 * hidden] = forget_bias
        self.bias = Param(bias, "bias")

    def params(self):
        return [self.weight, self.bias]

    def hyper(self):
        return {"input_size": self.input_size, "hidden": self.hidden}

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError("Lstm input", ("B", "T", self.input_size), x.shape)
        b, t_len, d = x.shape
        hdim = self.hidden
        w = self.weight.value
        wx, wh = w[:d], w[d:]
        dtype = np.result_type(x.dtype, w.dtype)
        zx = (x.reshape(-1, d) @ wx).reshape(b, t_len, 4 * hdim) + self.bias.value
        h = np.zeros((b, hdim), dtype=dtype)
        c = np.zeros((b, hdim), dtype=dtype)
        hs = np.empty((t_len + 1, b, hdim), dtype=dtype)
        cs = np.empty((t_len + 1, b, hdim), dtype=dtype)
        gates = np.empty((t_len, b, 4 * hdim), dtype=dtype)
        hs[0], cs[0] = h, c
        for t in range(t_len):
            z = zx[:, t] + h @ wh
            g = gates[t]
            g[:, :2 * hdim] = _sigmoid(z[:, :2 * hdim])
            g[:, 2 * hdim:3 * hdim] = np.tanh(z[:, 2 * hdim:3 * hdim])
            g[:, 3 * hdim:] = _sigmoid(z[:, 3 * hdim:])
            i, f, gg, o = (g[:, k * hdim:(k + 1) * hdim] for k in range(4))
            c = f * c + i * gg
            h = o * np.tanh(c)
            hs[t + 1], cs[t + 1] = h, c
        return h, self._cache((x, hs, cs, gates))

    def backward(self, cache, dy):
        x, hs, cs, gates = self._open(cache)
        b, t_len, d = x.shape
        hdim = self.hidden
        wh = self.weight.value[d:]
        dz = np.empty_like(gates)
        dh = dy
        dc = np.zeros_like(dy)
        for t in reversed(range(t_len)):
            g = gates[t]
            i, f, gg, o = (g[:, k * hdim:(k + 1) * hdim] for k in range(4))
            tc = np.tanh(cs[t + 1])
            dc = dc + dh * o * (1.0 - tc * tc)
            z = dz[t]
            z[:, :hdim] = dc * gg * i * (1.0 - i)
            z[:, hdim:2 * hdim] = dc * cs[t] * f * (1.0 - f)
            z[:, 2 * hdim:3 * hdim] = dc * i * (1.0 - gg * gg)
            z[:, 3 * hdim:] = dh * tc * o * (1.0 - o)
            dc = dc * f
            dh = z @ wh.T
        dz_bt = dz.transpose(1, 0, 2).reshape(-1, 4 * hdim)  # (B*T, 4H) batch-major like x
        dwx = x.reshape(-1, d).T @ dz_bt
        dwh = hs[:-1].reshape(-1, hdim).T @ dz.reshape(-1, 4 * hdim)
        self.weight.grad[:d] += dwx
        self.weight.grad[d:] += dwh
        self.bias.grad += dz.sum(axis=(0, 1))
        dx = (dz_bt @ self.weight.value[:d].T).reshape(b, t_len, d)
        return dx


class SoftmaxOut(Layer):
    kind = "SoftmaxOut"

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        y = softmax(x)
        return y, self._cache(y)

    def backward(self, cache, dy):
        y = self._open(cache)
        return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def build_layer(spec: LayerSpec | dict, rng=None, dtype=DEFAULT_DTYPE) -> Layer:
    if isinstance(spec, dict):
        spec = LayerSpec(spec["kind"], {k: v for k, v in spec.items() if k != "kind"})
    h = spec.hyper
    kind = spec.kind
    if kind == "Dense":
        return Dense(h["n_in"], h["n_out"], rng, dtype)
    if kind == "Conv2d":
        return Conv2d(h["in_channels"], h["out_channels"], tuple(h["kernel"]), rng, dtype)
    if kind == "BatchNorm":
        return BatchNorm(h["num_features"], h.get("eps", BN_EPS), h.get("momentum", BN_MOMENTUM),
                         dtype)
    if kind == "Lstm":
        return Lstm(h["input_size"], h["hidden"], rng, dtype)
    if kind == "Dropout":
        return Dropout(h["p"])
    if kind == "ReLU":
        return ReLU()
    if kind == "Flatten":
        return Flatten()
    if kind == "SoftmaxOut":
        return SoftmaxOut()
    raise ValueError(f"unknown layer kind {kind!r}")
