"""Experiment configuration: JSON schema, named presets and helpers that turn
a validated document into library objects."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .attacks import AttackConfig, Budget, BypassConfig
from .classifier import TrainConfig
from .inr import FitConfig, InrArch
from .rng import REFERENCE_KEY

_INT = {"type": "integer"}
_POS = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"type": "string"},
        "out": {"type": "string"},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["format"],
            "properties": {
                "format": {"enum": ["synthetic", "cifar10", "lnt1"]},
                "path": {"type": "string"},
                "test_path": {"type": "string"},
                "train_size": _POS,
                "test_size": _POS,
                "size": _POS,
                "key": _INT,
            },
        },
        "transform": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["none", "linac", "linac-reconstruction", "block-shuffle"]},
                "key": _INT,
                "repr_layer": {"type": "integer", "minimum": 0},
                "block": _POS,
                "arch": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"layers": _POS, "width": _POS, "freqs": _POS,
                                   "grid": {"enum": ["centers", "endpoints"]}},
                },
                "fit": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"epochs": _POS, "batch_size": _POS,
                                   "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                                   "alpha": {"type": "number", "exclusiveMinimum": 0,
                                             "maximum": 1}},
                },
            },
        },
        "classifier": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "widths": {"type": "array", "items": _POS, "minItems": 3, "maxItems": 3},
                "key": _INT,
                "train": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "epochs": _POS, "batch_size": _POS,
                        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                        "drops": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                        "drop_factor": _NUM, "weight_decay": {"type": "number", "minimum": 0},
                        "momentum": {"type": "number", "minimum": 0, "maximum": 1},
                        "ema_decay": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                        "cutmix": {"type": "boolean"},
                    },
                },
            },
        },
        "bypass": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"epochs": _POS, "batch_size": _POS,
                           "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                           "train_size": _POS},
        },
        "attacks": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "name": {"type": "string"},
                    "kind": {"enum": ["pgd", "mt-pgd", "square"]},
                    "via": {"enum": ["direct", "bpda", "bypass"]},
                    "sources": {"type": "array", "items": {"type": "string"}},
                    "attacker_key": _INT,
                    "norm": {"enum": ["linf", "l2"]},
                    "epsilon": {"type": "number", "exclusiveMinimum": 0},
                    "steps": _POS, "restarts": _POS, "queries": _POS,
                    "step_size": {"type": "number", "exclusiveMinimum": 0},
                    "key": _INT,
                },
            },
        },
        "eval_size": _POS,
    },
}

PRESETS = {
    "paper-appendix-a": {
        "dataset": {"format": "cifar10", "path": "data/cifar-10-batches-bin"},
        "transform": {"kind": "linac", "key": REFERENCE_KEY, "repr_layer": 2,
                      "arch": {"layers": 5, "width": 256, "freqs": 5},
                      "fit": {"epochs": 10, "batch_size": 32, "learning_rate": 1e-3,
                              "alpha": 1e-4}},
        "classifier": {"train": {"epochs": 1000, "batch_size": 1024, "learning_rate": 0.4,
                                 "drops": [650, 800, 900, 950], "weight_decay": 5e-4,
                                 "momentum": 0.9, "ema_decay": 0.995, "cutmix": True}},
        "bypass": {"epochs": 100, "learning_rate": 0.1},
        "attacks": [
            {"name": "pgd", "kind": "pgd", "norm": "linf", "epsilon": 8 / 255, "steps": 100,
             "restarts": 10},
            {"name": "mt-pgd", "kind": "mt-pgd", "norm": "linf", "epsilon": 8 / 255,
             "steps": 200, "restarts": 20},
            {"name": "square", "kind": "square", "norm": "linf", "epsilon": 8 / 255,
             "queries": 10000, "restarts": 10},
        ],
        "eval_size": 10000,
        "out": "runs/full",
    },
    "desk-small": {
        "dataset": {"format": "synthetic", "size": 16, "train_size": 4000, "test_size": 500,
                    "key": 1},
        "transform": {"kind": "linac", "key": REFERENCE_KEY, "repr_layer": 2,
                      "arch": {"layers": 5, "width": 64, "freqs": 5},
                      "fit": {"epochs": 5, "batch_size": 8, "learning_rate": 1e-3,
                              "alpha": 1e-4}},
        "classifier": {"train": {"epochs": 20, "batch_size": 64, "learning_rate": 0.04,
                                 "drops": [13, 16, 18, 19], "weight_decay": 5e-4,
                                 "momentum": 0.9, "ema_decay": 0.995, "cutmix": False}},
        "bypass": {"epochs": 20, "learning_rate": 0.1, "train_size": 2000},
        "attacks": [
            {"name": "pgd", "kind": "pgd", "norm": "linf", "epsilon": 8 / 255, "steps": 20,
             "restarts": 1},
            {"name": "square", "kind": "square", "norm": "linf", "epsilon": 8 / 255,
             "queries": 2000, "restarts": 1},
        ],
        "eval_size": 500,
        "out": "runs/desk",
    },
}


class ConfigError(ValueError):
    pass


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path(err):
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def validate(doc) -> dict:
    """Resolve ``preset`` and validate; errors name the offending JSON path."""
    if not isinstance(doc, dict):
        raise ConfigError("$: config must be a JSON object")
    if "preset" in doc:
        name = doc["preset"]
        if name not in PRESETS:
            raise ConfigError(f"$.preset: unknown preset {name!r}; choose from {sorted(PRESETS)}")
        doc = deep_merge(PRESETS[name], {k: v for k, v in doc.items() if k != "preset"})
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(doc), key=lambda e: e.path)
    if errors:
        raise ConfigError("; ".join(f"{_path(e)}: {e.message}" for e in errors))
    t = doc.get("transform", {"kind": "none"})
    if t["kind"] != "none" and "key" not in t:
        raise ConfigError(f"$.transform.key: required for transform kind {t['kind']!r}")
    if t["kind"] == "linac":
        layers = t.get("arch", {}).get("layers", 5)
        if t.get("repr_layer", 2) >= layers:
            raise ConfigError(f"$.transform.repr_layer: must be < layers ({layers}); "
                              "use kind 'linac-reconstruction' for the colour output")
    ds = doc.get("dataset", {})
    if ds.get("format") in ("cifar10", "lnt1"):
        if "path" not in ds:
            raise ConfigError("$.dataset.path: required for this format")
        if not Path(ds["path"]).exists():
            raise ConfigError(f"$.dataset.path: {ds['path']} does not exist")
    return doc


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate(doc)


def fit_objects(t: dict):
    arch = InrArch(**t.get("arch", {}))
    fit = dict(t.get("fit", {}))
    cfg = FitConfig(key=t.get("key", REFERENCE_KEY), **fit)
    return cfg, arch


def train_config(doc: dict) -> TrainConfig:
    train = dict(doc.get("classifier", {}).get("train", {}))
    if "drops" in train:
        train["drops"] = tuple(train["drops"])
    return TrainConfig(**train)


def bypass_config(doc: dict, tag: str) -> BypassConfig:
    b = {k: v for k, v in doc.get("bypass", {}).items() if k != "train_size"}
    epochs = b.pop("epochs", 100 if tag == "conv" else 300)
    if tag == "conv":
        return BypassConfig.for_linac(epochs, **b)
    return BypassConfig.for_block_shuffle(epochs, **b)


def attack_objects(entry: dict):
    budget = Budget(entry.get("norm", "linf"),
                    entry.get("epsilon", 8 / 255 if entry.get("norm", "linf") == "linf" else 0.5))
    cfg = AttackConfig(entry["kind"], entry.get("steps", 20), entry.get("restarts", 1),
                       entry.get("step_size"), entry.get("queries", 1000))
    return budget, cfg
