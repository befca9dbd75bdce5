"""End-to-end runs driven by a validated config document: data loading,
the keyed defence, classifier training, attack suites, key guessing and
hyperparameter sweeps.  The CLI is a thin layer over these functions."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import lnt1
from .attacks import brute_force_keys, pba_attack, run_attack, train_pba
from .classifier import Classifier, ClassifierSpec, train_classifier
from .config import attack_objects, bypass_config, fit_objects, train_config, validate
from .datasets import load_cifar10, make_synthetic
from .evaluation import CorrectnessMasks
from .inr import FitConfig, InrArch
from .models import NetworkStage, Pipeline, TransformStage
from .nn import tree_leaves
from .rng import derive_stream, random_keys
from .transforms import (NormalizationStats, ShuffleKeySpec, block_pixel_shuffle,
                         fit_normalization, linac_reconstruction, linac_transform)

@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("x_train", "y_train", "x_test", "y_test"):
            arr = getattr(self, name)
            lnt1.save(directory / f"{name}.lnt1", arr.astype(np.int64 if name[0] == "y" else
                                                             np.float32))

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        return cls(*(lnt1.load(directory / f"{n}.lnt1")
                     for n in ("x_train", "y_train", "x_test", "y_test")))


def load_dataset(ds: dict) -> Dataset:
    fmt = ds["format"]
    if fmt == "synthetic":
        key = ds.get("key", 1)
        size = ds.get("size", 16)
        x, y = make_synthetic(ds.get("train_size", 4000), size, key)
        xt, yt = make_synthetic(ds.get("test_size", 500), size, key + 1)
        return Dataset(x, y, xt, yt)
    if fmt == "cifar10":
        x, y = load_cifar10(ds["path"], "train", ds.get("train_size"))
        xt, yt = load_cifar10(ds["path"], "test", ds.get("test_size"))
        return Dataset(x, y, xt, yt)
    d = Dataset.load(ds["path"])
    n, m = ds.get("train_size"), ds.get("test_size")
    return Dataset(d.x_train[:n], d.y_train[:n], d.x_test[:m], d.y_test[:m])


@dataclass
class Defence:
    """The keyed input transform placed in front of the classifier."""

    kind: str = "none"
    key: int = 0
    repr_layer: int = 2
    block: int = 4
    fit: FitConfig = FitConfig()
    arch: InrArch = InrArch()
    stats: NormalizationStats | None = None
    workers: int | None = None

    @classmethod
    def from_config(cls, t: dict, x_train=None, workers=None):
        cfg, arch = fit_objects(t)
        stats = None
        if t["kind"] in ("linac", "linac-reconstruction") and x_train is not None:
            stats = fit_normalization(x_train)
        return cls(t["kind"], t.get("key", 0), t.get("repr_layer", 2), t.get("block", 4),
                   cfg, arch, stats, workers)

    @property
    def channels(self):
        return self.arch.width if self.kind == "linac" else 3

    def with_key(self, key):
        return replace(self, key=key, fit=replace(self.fit, key=key))

    def __call__(self, x):
        if self.kind == "none":
            return np.asarray(x, np.float32)
        if self.kind == "block-shuffle":
            return block_pixel_shuffle(np.asarray(x, np.float32),
                                       ShuffleKeySpec(self.key, self.block))
        if self.kind == "linac":
            return linac_transform(x, self.key, self.fit, self.arch, self.repr_layer, self.stats,
                                   self.workers)
        return linac_reconstruction(x, self.key, self.fit, self.arch, self.stats, self.workers)

    def to_dict(self):
        return {"kind": self.kind, "key": self.key, "repr_layer": self.repr_layer,
                "block": self.block,
                "fit": {"epochs": self.fit.epochs, "batch_size": self.fit.batch_size,
                        "learning_rate": self.fit.learning_rate, "alpha": self.fit.alpha},
                "arch": {"layers": self.arch.layers, "width": self.arch.width,
                         "freqs": self.arch.freqs, "grid": self.arch.grid},
                "stats": self.stats.to_dict() if self.stats else None}

    @classmethod
    def from_dict(cls, d, workers=None):
        stats = NormalizationStats.from_dict(d["stats"]) if d.get("stats") else None
        return cls(d["kind"], d["key"], d["repr_layer"], d["block"],
                   FitConfig(key=d["key"], **d["fit"]), InrArch(**d["arch"]), stats, workers)


def defended_pipeline(classifier: Classifier, defence: Defence, surrogate=None,
                      name="defended") -> Pipeline:
    stage = NetworkStage(classifier.network(), classifier.params, "classifier")
    if defence.kind == "none":
        return Pipeline([stage], name=name)
    return Pipeline([TransformStage(defence, surrogate, defence.kind), stage], name=name)


def params_digest(params) -> str:
    h = hashlib.sha256()
    for leaf in tree_leaves(params):
        h.update(np.ascontiguousarray(leaf).tobytes())
    return h.hexdigest()[:16]


@dataclass
class Experiment:
    doc: dict
    data: Dataset
    defence: Defence
    classifier: Classifier
    metrics: dict

    def defended(self, surrogate=None):
        return defended_pipeline(self.classifier, self.defence, surrogate)

    def eval_set(self):
        n = self.doc.get("eval_size", len(self.data.y_test))
        return self.data.x_test[:n], self.data.y_test[:n]

    def save(self, directory):
        directory = Path(directory)
        self.classifier.save(directory / "classifier")
        _write_json(directory / "defence.json", self.defence.to_dict())
        _write_json(directory / "experiment.json", self.doc)
        _write_json(directory / "metrics.json", self.metrics)


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory, data: Dataset | None = None, workers=None) -> Experiment:
    directory = Path(directory)
    doc = json.loads((directory / "experiment.json").read_text())
    defence = Defence.from_dict(json.loads((directory / "defence.json").read_text()), workers)
    classifier = Classifier.load(directory / "classifier")
    metrics = json.loads((directory / "metrics.json").read_text())
    if data is None:
        data = load_dataset(doc["dataset"])
    return Experiment(doc, data, defence, classifier, metrics)


def _input_stats(defence: Defence, x_train):
    # activation images go to the classifier unnormalised; RGB-shaped inputs
    # are standardised with training-set statistics
    if defence.kind == "linac":
        return None
    if defence.kind == "linac-reconstruction":
        return defence.stats
    return fit_normalization(x_train)


def train_experiment(doc: dict, data: Dataset | None = None, workers=None, log=None) -> Experiment:
    """Transform the training set with the keyed defence and fit the classifier."""
    data = load_dataset(doc["dataset"]) if data is None else data
    defence = Defence.from_config(doc.get("transform", {"kind": "none"}), data.x_train, workers)
    cfg = train_config(doc)
    n_eval = doc.get("eval_size", len(data.y_test))
    xe, ye = data.x_test[:n_eval], data.y_test[:n_eval]
    ae = defence(xe)
    widths = tuple(doc.get("classifier", {}).get("widths", (32, 64, 64)))
    if cfg.cutmix and defence.kind != "none":
        # CutMix mixes raw images, so the defence runs on every batch
        spec = ClassifierSpec(defence.channels, 10, widths, _input_stats(defence, data.x_train))
        clf = train_classifier(data.x_train, data.y_train, spec, cfg,
                               key=doc.get("classifier", {}).get("key", 0), transform=defence,
                               eval_set=(ae, ye), log=log)
    else:
        a = defence(data.x_train)
        spec = ClassifierSpec(defence.channels, 10, widths, _input_stats(defence, data.x_train))
        clf = train_classifier(a, data.y_train, spec, cfg,
                               key=doc.get("classifier", {}).get("key", 0),
                               eval_set=(ae, ye), log=log)
    clean = float(np.mean(clf.predict(ae) == ye))
    metrics = {"clean_accuracy": clean, "eval_examples": int(len(ye)),
               "train_examples": int(len(data.y_train)), "model_digest": params_digest(clf.params)}
    return Experiment(doc, data, defence, clf, metrics)


def default_via(kind: str, defence: Defence) -> str:
    if kind == "square" or defence.kind == "none":
        return "direct"
    if defence.kind == "linac-reconstruction":
        return "bpda"
    return "bypass"


def train_bypass(exp: Experiment, log=None):
    tag = "conv" if exp.defence.kind.startswith("linac") else "block-linear"
    n = exp.doc.get("bypass", {}).get("train_size", len(exp.data.y_train))
    cfg = bypass_config(exp.doc, tag)
    return train_pba(exp.classifier, exp.data.x_train[:n], exp.data.y_train[:n], tag, cfg,
                     stats=exp.defence.stats if tag == "conv" else None,
                     block=exp.defence.block, log=log)


def run_attacks(exp: Experiment, log=None):
    """Run every configured attack on the evaluation subset.

    Returns ``(masks, outcomes, metadata)``; mask rows are attack names and
    columns the route the perturbation was crafted through.
    """
    x, y = exp.eval_set()
    defended = exp.defended()
    masks = CorrectnessMasks(defended.predict(x) == y)
    outcomes, bypass, budgets = {}, None, set()
    for i, entry in enumerate(exp.doc.get("attacks", [])):
        budget, cfg = attack_objects(entry)
        budgets.add((budget.norm, budget.epsilon))
        name = entry.get("name", entry["kind"])
        via = entry.get("via", default_via(entry["kind"], exp.defence))
        key = entry.get("key", i)
        if via == "bypass":
            if bypass is None:
                bypass = train_bypass(exp, log)
            out, correct = pba_attack(bypass.model(exp.classifier), defended, x, y, budget,
                                      cfg, key)
        else:
            model = exp.defended("identity" if via == "bpda" else None)
            out = run_attack(model, x, y, budget, cfg, key)
            correct = defended.predict(out.x_adv) == y
        masks.add(name, via, correct)
        outcomes[(name, via)] = out
        if log is not None:
            log({"attack": name, "via": via, "robust_accuracy": float(np.mean(correct & masks.clean))})
    meta = {"budgets": sorted([list(b) for b in budgets]),
            "model_digest": params_digest(exp.classifier.params),
            "defence": exp.defence.kind, "examples": int(len(y))}
    return masks, outcomes, meta


def brute_force(exp: Experiment, n_keys: int, batch: int = 100, seed: int = 0):
    """Rank the true key among ``n_keys`` random guesses by accuracy."""
    guesses, _ = random_keys(derive_stream(seed, "bruteforce"), n_keys)
    keys = [exp.defence.key] + [k for k in guesses if k != exp.defence.key]
    x, y = exp.data.x_test, exp.data.y_test
    return brute_force_keys(exp.classifier.model(), lambda xb, k: exp.defence.with_key(k)(xb),
                            keys, x, y, batch)


SWEEP_PARAMS = {"F": ("arch", "freqs"), "L": ("arch", "layers"), "K": (None, "repr_layer"),
                "N": ("fit", "epochs")}


def sweep(doc: dict, param: str, values, workers=None, log=None):
    """Retrain and attack once per value of one transform hyperparameter.

    Returns rows ``{"value", "clean_accuracy", "robust_accuracy"}`` with the
    robust figure from the first PGD entry of the attack list.
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"sweep parameter must be one of {sorted(SWEEP_PARAMS)}")
    block, field = SWEEP_PARAMS[param]
    pgd_entries = [a for a in doc.get("attacks", []) if a["kind"] == "pgd"][:1]
    if not pgd_entries:
        pgd_entries = [{"name": "pgd", "kind": "pgd"}]
    data = load_dataset(doc["dataset"])
    rows = []
    for v in values:
        d = json.loads(json.dumps(doc))
        t = d.setdefault("transform", {"kind": "linac"})
        if block is None:
            t[field] = int(v)
        else:
            t.setdefault(block, {})[field] = int(v)
        d["attacks"] = pgd_entries
        d = validate(d)
        exp = train_experiment(d, data, workers)
        masks, _, _ = run_attacks(exp)
        col = next(iter(masks.robust[masks.attacks[0]].values()))
        row = {"value": int(v), "clean_accuracy": float(masks.clean.mean()),
               "robust_accuracy": float(np.mean(masks.clean & col))}
        rows.append(row)
        if log is not None:
            log(row)
    return rows
