"""Bypass classifiers: learn a small differentiable map ``h_psi`` so the frozen
defended classifier works on raw images, then attack ``f(h_psi(x))``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..classifier import Classifier
from ..models import NetworkStage, Pipeline
from ..nn import (BlockLinear, ChannelAffine, Conv2d, NonFiniteError, Sequential,
                  momentum_init, nesterov_step, softmax_cross_entropy)
from ..rng import derive_stream, permutation
from ..transforms import NormalizationStats, check_images

ARCH_TAGS = ("conv", "block-linear")


@dataclass(frozen=True)
class BypassConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.1
    drops: tuple = (65, 80, 90, 95)
    drop_factor: float = 0.1
    momentum: float = 0.9
    label: str = "bypass"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch size and learning rate must be positive")

    @classmethod
    def for_linac(cls, epochs=100, learning_rate=0.1, **kw):
        drops = tuple(int(round(f * epochs)) for f in (0.65, 0.8, 0.9, 0.95))
        return cls(epochs=epochs, learning_rate=learning_rate, drops=drops, **kw)

    @classmethod
    def for_block_shuffle(cls, epochs=300, learning_rate=0.001, **kw):
        drops = tuple(int(round(f * epochs)) for f in (275 / 300, 285 / 300, 290 / 300, 295 / 300))
        return cls(epochs=epochs, learning_rate=learning_rate, drops=drops, **kw)


def bypass_layers(tag, out_channels=3, stats: NormalizationStats | None = None, block=4):
    """Layers of ``h_psi``.

    ``"conv"``: optional standardisation then a 3x3 convolution with bias
    mapping RGB to ``out_channels``.  ``"block-linear"``: one bias-free
    identity-initialised linear map shared by every ``block x block`` tile.
    """
    if tag == "conv":
        pre = [ChannelAffine(tuple(stats.mean), tuple(stats.std))] if stats else []
        return pre + [Conv2d(3, out_channels, kernel=3, bias=True)]
    if tag == "block-linear":
        return [BlockLinear(block, channels=3)]
    raise ValueError(f"arch tag must be one of {ARCH_TAGS}, got {tag!r}")


@dataclass
class BypassParams:
    tag: str
    layers: list
    params: list
    curve: list

    def network(self):
        return Sequential(self.layers)

    def apply(self, x):
        return self.network()(self.params, np.asarray(x, np.float32))

    def model(self, defended: Classifier, name="bypass") -> Pipeline:
        """``f_theta(h_psi(x))`` as one differentiable pipeline."""
        return Pipeline([NetworkStage(self.network(), self.params, "h_psi"),
                         NetworkStage(defended.network(), defended.params, "classifier")],
                        name=name)


def train_pba(defended: Classifier, x, y, tag, cfg: BypassConfig, key: int = 0,
              stats: NormalizationStats | None = None, block: int = 4, log=None) -> BypassParams:
    """Minimise cross-entropy of the frozen ``defended`` classifier applied to
    ``h_psi(x)`` over ``psi`` only."""
    x = check_images(x, 3).astype(np.float32)
    y = np.asarray(y, dtype=np.int64)
    layers = bypass_layers(tag, defended.spec.in_channels, stats, block)
    h = Sequential(layers)
    f = defended.network()
    f.output_shape(h.output_shape(x.shape))
    psi, _ = h.init_params(derive_stream(key, f"{cfg.label}-init"))
    theta = defended.params
    mom = momentum_init(psi, cfg.momentum, nesterov=False)
    curve = []
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.drop_factor ** sum(epoch >= d for d in cfg.drops)
        order = permutation(derive_stream(key, f"{cfg.label}-epoch({epoch})"), len(x))[0]
        total = 0.0
        for i in range(0, len(x), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            u, hc = h.forward(psi, x[idx])
            z, fc = f.forward(theta, u)
            loss, gz = softmax_cross_entropy(z.astype(np.float64), y[idx])
            if not np.all(np.isfinite(loss)):
                raise NonFiniteError(f"bypass training diverged at epoch {epoch}")
            gu, _ = f.backward(theta, fc, (gz / len(idx)).astype(np.float32))
            _, grads = h.backward(psi, hc, gu)
            psi, mom = nesterov_step(psi, grads, mom, lr)
            total += float(loss.sum())
        row = {"epoch": epoch, "loss": total / len(x), "lr": lr}
        curve.append(row)
        if log is not None:
            log(row)
    return BypassParams(tag, layers, psi, curve)


def agreement(a, b, x) -> float:
    """Fraction of inputs on which two models predict the same class."""
    return float(np.mean(a.predict(x) == b.predict(x)))
