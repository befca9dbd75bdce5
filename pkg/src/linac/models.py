"""Attackable models as chains of stages.

A stage maps a batch forward and, when it can, pulls an output gradient
back to its input.  A :class:`Pipeline` strings stages together and counts
every forward query and backward pass so attacks can be audited for the
oracle access they actually used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Sequential, softmax, softmax_cross_entropy


class NotDifferentiableError(RuntimeError):
    pass


class NetworkStage:
    """A :class:`Sequential` network with fixed parameters."""

    differentiable = True

    def __init__(self, net: Sequential, params, name="network"):
        net.check_params(params)
        self.net, self.params, self.name = net, params, name

    def forward(self, x):
        return self.net.forward(self.params, x)

    def backward(self, ctx, gy):
        return self.net.backward(self.params, ctx, gy)[0]


class TransformStage:
    """A black-box input transformation.

    ``surrogate="identity"`` makes the backward pass treat the stage as the
    identity map (straight-through); otherwise gradients are unavailable.
    """

    def __init__(self, fn, surrogate=None, name="transform"):
        if surrogate not in (None, "identity"):
            raise ValueError(f"unknown surrogate {surrogate!r}")
        self.fn, self.surrogate, self.name = fn, surrogate, name

    @property
    def differentiable(self):
        return self.surrogate is not None

    def forward(self, x):
        y = np.asarray(self.fn(x))
        if self.surrogate == "identity" and y.shape != x.shape:
            raise ValueError(
                f"identity surrogate needs matching shapes, got {x.shape} -> {y.shape}")
        return y, None

    def backward(self, ctx, gy):
        if self.surrogate is None:
            raise NotDifferentiableError(f"stage {self.name!r} has no backward pass")
        return gy


@dataclass
class QueryCounter:
    forward_calls: int = 0
    forward_examples: int = 0
    backward_calls: int = 0
    backward_examples: int = 0


class Pipeline:
    """Stages applied left to right, ending in class logits."""

    def __init__(self, stages, name="model", batch_size=256):
        self.stages = list(stages)
        self.name = name
        self.batch_size = batch_size
        self.counter = QueryCounter()

    @property
    def differentiable(self):
        return all(s.differentiable for s in self.stages)

    def _forward(self, x, keep):
        ctxs = []
        for stage in self.stages:
            x, ctx = stage.forward(x)
            if keep:
                ctxs.append(ctx)
        return x, ctxs

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x)
        self.counter.forward_calls += 1
        self.counter.forward_examples += len(x)
        outs = [self._forward(x[i:i + self.batch_size], False)[0]
                for i in range(0, len(x), self.batch_size)]
        return np.concatenate(outs) if outs else np.empty((0, 0))

    def predict_proba(self, x):
        return softmax(self.logits(x).astype(np.float64))

    def predict(self, x):
        return self.logits(x).argmax(axis=-1)

    def value_and_grad(self, x, loss_fn):
        """``loss_fn(logits) -> (values, dlogits)``; returns ``(values, dx, logits)``."""
        if not self.differentiable:
            bad = [s.name for s in self.stages if not s.differentiable]
            raise NotDifferentiableError(f"no backward pass through {bad}")
        x = np.asarray(x)
        self.counter.forward_calls += 1
        self.counter.forward_examples += len(x)
        self.counter.backward_calls += 1
        self.counter.backward_examples += len(x)
        vals, grads, logits = [], [], []
        for i in range(0, len(x), self.batch_size):
            xb = x[i:i + self.batch_size]
            z, ctxs = self._forward(xb, True)
            v, g = loss_fn(z, slice(i, i + len(xb)))
            for stage, ctx in zip(reversed(self.stages), reversed(ctxs)):
                g = stage.backward(ctx, g)
            vals.append(v), grads.append(g), logits.append(z)
        return np.concatenate(vals), np.concatenate(grads).astype(x.dtype), np.concatenate(logits)

    def ce_grad(self, x, y):
        y = np.asarray(y)
        return self.value_and_grad(
            x, lambda z, sl: softmax_cross_entropy(z.astype(np.float64), y[sl]))


def accuracy(model, x, y, transform=None) -> float:
    """Fraction of examples whose argmax prediction equals the label;
    ``transform`` is applied to the inputs first when given."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if transform is not None:
        x = transform(x)
    return float(np.mean(model.predict(x) == y))
