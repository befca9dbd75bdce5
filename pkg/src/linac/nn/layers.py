"""Layers with hand-written forward and backward passes.

Images are NHWC.  Every layer is a small frozen dataclass that doubles as
its own spec: it knows its output shape, how many parameters it owns, and
how to initialise them from a stream.  Parameters live outside the layer in
plain dicts of arrays so optimisers can treat them as data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..rng import RngStream, gaussians


class ShapeError(ValueError):
    """Raised when an input does not match what a layer expects."""


@dataclass(frozen=True)
class Layer:
    kind = "layer"

    def output_shape(self, in_shape: tuple) -> tuple:
        return tuple(in_shape)

    def param_shapes(self) -> dict:
        return {}

    def init_params(self, s: RngStream, dtype=np.float32):
        return {}, s

    def forward(self, params, x):
        raise NotImplementedError

    def backward(self, params, cache, gy):
        raise NotImplementedError

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        d.update(self.__dict__)
        return d


def _lecun(s: RngStream, shape, fan_in, dtype):
    z, s = gaussians(s, int(np.prod(shape)))
    w = (z / np.sqrt(fan_in)).reshape(shape)
    return w.astype(dtype), s


@dataclass(frozen=True)
class Dense(Layer):
    in_features: int
    out_features: int
    bias: bool = True
    kind = "dense"

    def output_shape(self, in_shape):
        if in_shape[-1] != self.in_features:
            raise ShapeError(
                f"dense expects {self.in_features} features, got {in_shape[-1]}")
        return tuple(in_shape[:-1]) + (self.out_features,)

    def param_shapes(self):
        shapes = {"W": (self.in_features, self.out_features)}
        if self.bias:
            shapes["b"] = (self.out_features,)
        return shapes

    def init_params(self, s, dtype=np.float32):
        W, s = _lecun(s, (self.in_features, self.out_features), self.in_features, dtype)
        params = {"W": W}
        if self.bias:
            params["b"] = np.zeros(self.out_features, dtype=dtype)
        return params, s

    def forward(self, params, x):
        y = x @ params["W"]
        if self.bias:
            y = y + params["b"]
        return y, x

    def backward(self, params, x, gy):
        x2 = x.reshape(-1, self.in_features)
        g2 = gy.reshape(-1, self.out_features)
        grads = {"W": x2.T @ g2}
        if self.bias:
            grads["b"] = g2.sum(axis=0)
        return gy @ params["W"].T, grads


def _conv_out(n, stride):
    return (n + stride - 1) // stride


@dataclass(frozen=True)
class Conv2d(Layer):
    """Square-kernel convolution with zero "same" padding, via im2col."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    bias: bool = True
    kind = "conv2d"

    @property
    def padding(self):
        return self.kernel // 2

    def output_shape(self, in_shape):
        if len(in_shape) != 4 or in_shape[-1] != self.in_channels:
            raise ShapeError(
                f"conv2d expects NHWC with {self.in_channels} channels, got {tuple(in_shape)}")
        n, h, w, _ = in_shape
        return (n, _conv_out(h, self.stride), _conv_out(w, self.stride), self.out_channels)

    def param_shapes(self):
        k = self.kernel
        shapes = {"W": (k, k, self.in_channels, self.out_channels)}
        if self.bias:
            shapes["b"] = (self.out_channels,)
        return shapes

    def init_params(self, s, dtype=np.float32):
        k = self.kernel
        W, s = _lecun(s, (k, k, self.in_channels, self.out_channels),
                      k * k * self.in_channels, dtype)
        params = {"W": W}
        if self.bias:
            params["b"] = np.zeros(self.out_channels, dtype=dtype)
        return params, s

    def _windows(self, h, w):
        k, st = self.kernel, self.stride
        ho, wo = _conv_out(h, st), _conv_out(w, st)
        for dy in range(k):
            for dx in range(k):
                yield (slice(dy, dy + st * (ho - 1) + 1, st),
                       slice(dx, dx + st * (wo - 1) + 1, st))

    def forward(self, params, x):
        n, h, w, c = x.shape
        p = self.padding
        # extra trailing pad keeps every strided window in range
        xp = np.pad(x, ((0, 0), (p, p + self.stride), (p, p + self.stride), (0, 0)))
        cols = np.concatenate([xp[:, sy, sx, :] for sy, sx in self._windows(h, w)], axis=-1)
        y = cols @ params["W"].reshape(-1, self.out_channels)
        if self.bias:
            y = y + params["b"]
        return y, (x.shape, cols)

    def backward(self, params, cache, gy):
        (n, h, w, c), cols = cache
        p = self.padding
        kc = cols.shape[-1]
        g2 = gy.reshape(-1, self.out_channels)
        grads = {"W": (cols.reshape(-1, kc).T @ g2).reshape(params["W"].shape)}
        if self.bias:
            grads["b"] = g2.sum(axis=0)
        gcols = gy @ params["W"].reshape(kc, self.out_channels).T
        gxp = np.zeros((n, h + 2 * p + self.stride, w + 2 * p + self.stride, c), dtype=gy.dtype)
        for i, (sy, sx) in enumerate(self._windows(h, w)):
            gxp[:, sy, sx, :] += gcols[..., i * c:(i + 1) * c]
        return gxp[:, p:p + h, p:p + w, :], grads


@dataclass(frozen=True)
class ReLU(Layer):
    kind = "relu"

    def forward(self, params, x):
        return np.maximum(x, 0), x > 0

    def backward(self, params, mask, gy):
        return gy * mask, {}


@dataclass(frozen=True)
class Swish(Layer):
    kind = "swish"

    def forward(self, params, x):
        sig = expit(x)
        return x * sig, (x, sig)

    def backward(self, params, cache, gy):
        x, sig = cache
        return gy * (sig + x * sig * (1 - sig)), {}


@dataclass(frozen=True)
class GlobalAvgPool(Layer):
    kind = "global-avg-pool"

    def output_shape(self, in_shape):
        if len(in_shape) != 4:
            raise ShapeError(f"global-avg-pool expects NHWC, got {tuple(in_shape)}")
        return (in_shape[0], in_shape[-1])

    def forward(self, params, x):
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, params, shape, gy):
        n, h, w, c = shape
        g = (gy / (h * w)).astype(gy.dtype)[:, None, None, :]
        return np.broadcast_to(g, shape).copy(), {}


@dataclass(frozen=True)
class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (in_shape[0], int(np.prod(in_shape[1:])))

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, shape, gy):
        return gy.reshape(shape), {}


@dataclass(frozen=True)
class BlockLinear(Layer):
    """One bias-free linear map applied to every ``block x block`` tile.

    Each tile is flattened (row, column, channel) into a vector of
    ``block * block * channels`` values and multiplied by the shared matrix.
    Initialised to the identity.
    """

    block: int
    channels: int = 3
    kind = "block-linear"

    @property
    def width(self):
        return self.block * self.block * self.channels

    def output_shape(self, in_shape):
        if (len(in_shape) != 4 or in_shape[-1] != self.channels
                or in_shape[1] % self.block or in_shape[2] % self.block):
            raise ShapeError(
                f"block-linear({self.block}) cannot tile input {tuple(in_shape)}")
        return tuple(in_shape)

    def param_shapes(self):
        return {"W": (self.width, self.width)}

    def init_params(self, s, dtype=np.float32):
        return {"W": np.eye(self.width, dtype=dtype)}, s

    def _tiles(self, x):
        n, h, w, c = x.shape
        b = self.block
        t = x.reshape(n, h // b, b, w // b, b, c).transpose(0, 1, 3, 2, 4, 5)
        return t.reshape(n, h // b, w // b, self.width)

    def _untile(self, t, shape):
        n, h, w, c = shape
        b = self.block
        x = t.reshape(n, h // b, w // b, b, b, c).transpose(0, 1, 3, 2, 4, 5)
        return x.reshape(shape)

    def forward(self, params, x):
        t = self._tiles(x)
        return self._untile(t @ params["W"], x.shape), t

    def backward(self, params, t, gy):
        gt = self._tiles(gy)
        grads = {"W": t.reshape(-1, self.width).T @ gt.reshape(-1, self.width)}
        return self._untile(gt @ params["W"].T, gy.shape), grads


@dataclass(frozen=True)
class ChannelAffine(Layer):
    """Fixed per-channel ``(x - mean) / std``; owns no trainable parameters."""

    mean: tuple
    std: tuple
    kind = "channel-affine"

    def output_shape(self, in_shape):
        if in_shape[-1] != len(self.mean):
            raise ShapeError(f"channel-affine expects {len(self.mean)} channels")
        return tuple(in_shape)

    def forward(self, params, x):
        mean = np.asarray(self.mean, dtype=x.dtype)
        std = np.asarray(self.std, dtype=x.dtype)
        return (x - mean) / std, None

    def backward(self, params, cache, gy):
        return gy / np.asarray(self.std, dtype=gy.dtype), {}


LAYER_KINDS = {cls.kind: cls for cls in
               (Dense, Conv2d, ReLU, Swish, GlobalAvgPool, Flatten, BlockLinear, ChannelAffine)}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    cls = LAYER_KINDS[d.pop("kind")]
    for key in ("mean", "std"):
        if key in d:
            d[key] = tuple(d[key])
    return cls(**d)
