"""Sequential composition of layers."""

from __future__ import annotations

import numpy as np

from ..rng import RngStream
from .layers import Layer, ShapeError, layer_from_dict


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


class Sequential:
    """A fixed chain of layers; parameters are passed in, never stored."""

    def __init__(self, layers):
        self.layers = tuple(layers)
        for layer in self.layers:
            if not isinstance(layer, Layer):
                raise TypeError(f"not a layer: {layer!r}")

    def __repr__(self):
        return f"Sequential({list(self.layers)!r})"

    def __eq__(self, other):
        return isinstance(other, Sequential) and self.layers == other.layers

    def output_shape(self, in_shape):
        """Propagate a shape through the chain, rejecting any mismatch."""
        shape = tuple(in_shape)
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        return shape

    def init_params(self, s: RngStream, dtype=np.float32):
        """Draw parameters layer by layer, row-major, from ``s``."""
        params = []
        for layer in self.layers:
            p, s = layer.init_params(s, dtype)
            params.append(p)
        return params, s

    def check_params(self, params):
        if len(params) != len(self.layers):
            raise ShapeError(f"expected {len(self.layers)} parameter groups, got {len(params)}")
        for i, (layer, p) in enumerate(zip(self.layers, params)):
            shapes = layer.param_shapes()
            if set(shapes) != set(p):
                raise ShapeError(f"layer {i}: parameter names {sorted(p)} != {sorted(shapes)}")
            for name, shape in shapes.items():
                if tuple(p[name].shape) != tuple(shape):
                    raise ShapeError(f"layer {i}: {name} has shape {p[name].shape}, want {shape}")

    def forward(self, params, x, keep_cache=True):
        self.output_shape(x.shape)
        caches = []
        for layer, p in zip(self.layers, params):
            x, cache = layer.forward(p, x)
            if keep_cache:
                caches.append(cache)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("non-finite network output")
        return x, caches

    def __call__(self, params, x):
        return self.forward(params, x, keep_cache=False)[0]

    def backward(self, params, caches, gy):
        """Return ``(input_grad, param_grads)`` for a cache from :meth:`forward`."""
        if len(caches) != len(self.layers):
            raise ValueError("cache does not come from a forward pass of this network")
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            gy, grads[i] = self.layers[i].backward(params[i], caches[i], gy)
        if not np.all(np.isfinite(gy)):
            raise NonFiniteError("non-finite input gradient")
        return gy, grads

    def to_list(self):
        return [layer.to_dict() for layer in self.layers]

    @classmethod
    def from_list(cls, items):
        return cls([layer_from_dict(d) for d in items])


def tree_map(fn, *trees):
    """Apply ``fn`` leaf-wise over parameter lists of dicts."""
    return [{k: fn(*(t[i][k] for t in trees)) for k in trees[0][i]}
            for i in range(len(trees[0]))]


def tree_leaves(tree):
    return [group[k] for group in tree for k in sorted(group)]


def cast_params(params, dtype):
    return tree_map(lambda a: np.asarray(a, dtype=dtype), params)
