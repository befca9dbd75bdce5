"""Small convolutional classifier trained with Nesterov SGD, step-decayed
learning rate, weight decay, optional CutMix and an EMA of the weights."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import lnt1
from .models import NetworkStage, Pipeline
from .nn import (ChannelAffine, Conv2d, Dense, GlobalAvgPool, NonFiniteError, Sequential, Swish,
                 ema_init, ema_update, momentum_init, nesterov_step, soft_cross_entropy, softmax,
                 softmax_cross_entropy)
from .rng import TRAINING, derive_stream, permutation
from .transforms import NormalizationStats, check_images, cutmix


@dataclass(frozen=True)
class ClassifierSpec:
    in_channels: int = 3
    num_classes: int = 10
    widths: tuple = (32, 64, 64)
    normalization: NormalizationStats | None = None

    def __post_init__(self):
        if self.in_channels < 1 or self.num_classes < 2:
            raise ValueError("need >= 1 input channel and >= 2 classes")
        if len(self.widths) != 3:
            raise ValueError("widths must list three conv widths")
        if self.normalization is not None and len(self.normalization.mean) != self.in_channels:
            raise ValueError("normalisation stats do not match the input channels")

    def network(self) -> Sequential:
        w1, w2, w3 = self.widths
        layers = []
        if self.normalization is not None:
            layers.append(ChannelAffine(tuple(self.normalization.mean),
                                        tuple(self.normalization.std)))
        layers += [Conv2d(self.in_channels, w1), Swish(),
                   Conv2d(w1, w2, stride=2), Swish(),
                   Conv2d(w2, w3, stride=2), Swish(),
                   GlobalAvgPool(), Dense(w3, self.num_classes)]
        return Sequential(layers)

    def to_dict(self):
        d = {"in_channels": self.in_channels, "num_classes": self.num_classes,
             "widths": list(self.widths)}
        d["normalization"] = self.normalization.to_dict() if self.normalization else None
        return d

    @classmethod
    def from_dict(cls, d):
        norm = d.get("normalization")
        return cls(d["in_channels"], d["num_classes"], tuple(d["widths"]),
                   NormalizationStats.from_dict(norm) if norm else None)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.04
    drops: tuple = (13, 16, 18, 19)
    drop_factor: float = 0.1
    weight_decay: float = 5e-4
    momentum: float = 0.9
    ema_decay: float = 0.995
    cutmix: bool = False
    label: str = TRAINING

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch size and learning rate must be positive")
        if not 0 <= self.ema_decay < 1:
            raise ValueError("ema_decay must lie in [0, 1)")

    @classmethod
    def full_scale(cls):
        return cls(epochs=1000, batch_size=1024, learning_rate=0.4, drops=(650, 800, 900, 950),
                   weight_decay=5e-4, momentum=0.9, ema_decay=0.995, cutmix=True)

    @classmethod
    def desk(cls, epochs=20, **kw):
        drops = tuple(int(round(f * epochs)) for f in (0.65, 0.8, 0.9, 0.95))
        return cls(epochs=epochs, drops=drops, **kw)


@dataclass
class Classifier:
    """A trained network; ``params`` are the evaluation (EMA) weights."""

    spec: ClassifierSpec
    params: list
    raw_params: list | None = None
    curve: list = field(default_factory=list)

    def network(self):
        return self.spec.network()

    def model(self, name="classifier", ema=True) -> Pipeline:
        params = self.params if ema or self.raw_params is None else self.raw_params
        return Pipeline([NetworkStage(self.network(), params, name)], name=name)

    def logits(self, x):
        x = check_images(x, self.spec.in_channels)
        return self.network()(self.params, x.astype(np.float32))

    def predict_proba(self, x):
        return softmax(self.logits(x).astype(np.float64))

    def predict(self, x):
        return self.logits(x).argmax(axis=-1)

    def save(self, directory):
        directory = Path(directory)
        lnt1.save_params(directory, self.params, {"spec": self.spec.to_dict(),
                                                  "layers": self.network().to_list()})
        write_curve(directory / "curve.csv", self.curve)

    @classmethod
    def load(cls, directory):
        params, doc = lnt1.load_params(directory)
        return cls(ClassifierSpec.from_dict(doc["spec"]), params)


def write_curve(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "lr", "clean_acc", "raw_acc"])
        for r in rows:
            w.writerow([r["epoch"], f"{r['loss']:.6f}", f"{r['lr']:.6g}",
                        "" if r.get("clean_acc") is None else f"{r['clean_acc']:.4f}",
                        "" if r.get("raw_acc") is None else f"{r['raw_acc']:.4f}"])


def _epoch_batches(key, label, epoch, n, batch):
    order = permutation(derive_stream(key, f"{label}-epoch({epoch})"), n)[0]
    return [order[i:i + batch] for i in range(0, n, batch)]


def train_classifier(x, y, spec: ClassifierSpec, cfg: TrainConfig, key: int = 0,
                     transform=None, eval_set=None, log=None) -> Classifier:
    """Fit ``spec`` on ``(x, y)``.

    ``transform`` maps an RGB batch to network inputs; it is applied after
    CutMix.  When it is ``None`` the inputs are used as they are.
    ``eval_set=(x, y)`` adds per-epoch accuracies (EMA and raw weights) to
    the training curve.
    """
    x = check_images(x)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0 or len(x) != len(y):
        raise ValueError("need a non-empty dataset with one label per image")
    if y.min() < 0 or y.max() >= spec.num_classes:
        raise ValueError(f"labels must lie in [0, {spec.num_classes})")
    net = spec.network()
    params, _ = net.init_params(derive_stream(key, f"{cfg.label}-init"))
    mom = momentum_init(params, cfg.momentum, nesterov=True)
    ema = ema_init(params, cfg.ema_decay)
    mix_stream = derive_stream(key, f"{cfg.label}-cutmix")
    curve = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.drop_factor ** sum(epoch >= d for d in cfg.drops)
        total, count = 0.0, 0
        for idx in _epoch_batches(key, cfg.label, epoch, len(x), cfg.batch_size):
            xb = x[idx]
            if cfg.cutmix:
                partners = np.roll(idx, 1)
                mixed, soft = [], []
                for i, j in zip(idx, partners):
                    xm, lab, mix_stream = cutmix(x[i], y[i], x[j], y[j], mix_stream,
                                                 spec.num_classes)
                    mixed.append(xm), soft.append(lab)
                xb, target = np.stack(mixed), np.stack(soft)
            else:
                target = None
            if transform is not None:
                xb = transform(xb)
            z, caches = net.forward(params, xb.astype(np.float32))
            z64 = z.astype(np.float64)
            if target is None:
                loss, gz = softmax_cross_entropy(z64, y[idx])
            else:
                loss, gz = soft_cross_entropy(z64, target)
            if not np.all(np.isfinite(loss)):
                raise NonFiniteError(f"non-finite training loss at epoch {epoch}, step {step}")
            _, grads = net.backward(params, caches, (gz / len(idx)).astype(np.float32))
            params, mom = nesterov_step(params, grads, mom, lr, cfg.weight_decay)
            ema = ema_update(ema, params)
            total += float(loss.sum())
            count += len(idx)
            step += 1
        row = {"epoch": epoch, "loss": total / count, "lr": lr, "clean_acc": None,
               "raw_acc": None}
        if eval_set is not None:
            ex, ey = eval_set
            row["clean_acc"] = float(np.mean(net(ema.shadow, ex).argmax(-1) == ey))
            row["raw_acc"] = float(np.mean(net(params, ex).argmax(-1) == ey))
        curve.append(row)
        if log is not None:
            log(row)
    return Classifier(spec, ema.shadow, params, curve)


def initial_loss(x, y, spec: ClassifierSpec, key: int = 0, label: str = TRAINING) -> float:
    """Mean cross-entropy of the freshly initialised network on ``(x, y)``."""
    net = spec.network()
    params, _ = net.init_params(derive_stream(key, f"{label}-init"))
    loss, _ = softmax_cross_entropy(net(params, np.asarray(x, np.float32)).astype(np.float64), y)
    return float(loss.mean())


def config_digest(spec: ClassifierSpec, cfg: TrainConfig) -> str:
    doc = {"spec": spec.to_dict(), "train": asdict(cfg)}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

