"""Perturbation budgets, attack settings and outcomes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import lnt1
from ..rng import ATTACK

NORMS = ("linf", "l2")
KINDS = ("pgd", "mt-pgd", "square")


@dataclass(frozen=True)
class Budget:
    norm: str = "linf"
    epsilon: float = 8 / 255

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")

    @classmethod
    def standard(cls, norm="linf"):
        return cls("linf", 8 / 255) if norm == "linf" else cls("l2", 0.5)


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "pgd"
    steps: int = 20
    restarts: int = 1
    step_size: float | None = None  # defaults to epsilon / 4
    queries: int = 1000
    label: str = ATTACK
    p_init: float = 0.8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.steps < 1 or self.restarts < 1 or self.queries < 1:
            raise ValueError("steps, restarts and queries must be >= 1")

    def alpha(self, budget: Budget) -> float:
        return budget.epsilon / 4 if self.step_size is None else self.step_size


@dataclass
class AttackOutcome:
    """Per-example results; ``x_adv`` has the dtype of the clean input."""

    x_adv: np.ndarray
    success: np.ndarray
    loss: np.ndarray
    queries: np.ndarray
    kind: str = ""
    budget: Budget | None = None
    history: list | None = None

    def robust_correct(self):
        return ~self.success

    def save(self, directory, x_clean=None):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        delta = self.x_adv if x_clean is None else self.x_adv - x_clean
        lnt1.save(directory / ("delta.lnt1" if x_clean is not None else "x_adv.lnt1"),
                  np.ascontiguousarray(delta, dtype=np.float32))
        lnt1.save(directory / "success.lnt1", self.success.astype(np.uint8))
        lnt1.save(directory / "queries.lnt1", self.queries.astype(np.int64))
        meta = {"kind": self.kind, "budget": asdict(self.budget) if self.budget else None,
                "examples": int(len(self.success)), "successes": int(self.success.sum()),
                "queries": int(self.queries.sum())}
        (directory / "outcome.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _flat_norm(d):
    return np.sqrt((d.reshape(len(d), -1) ** 2).sum(axis=1))


def project(delta, budget: Budget, x=None):
    """Pull ``delta`` into the norm ball, then keep ``x + delta`` in [0, 1]."""
    delta = np.asarray(delta, dtype=np.float64)
    if budget.norm == "linf":
        delta = np.clip(delta, -budget.epsilon, budget.epsilon)
    else:
        norms = _flat_norm(delta)
        factor = np.where(norms > budget.epsilon, budget.epsilon / np.maximum(norms, 1e-300), 1.0)
        delta = delta * factor.reshape((-1,) + (1,) * (delta.ndim - 1))
    if x is not None:
        x = np.asarray(x, dtype=np.float64)
        delta = np.clip(x + delta, 0.0, 1.0) - x
    return delta


def within_budget(x, x_adv, budget: Budget) -> np.ndarray:
    """Per-example exact check of the norm ball and the [0, 1] box."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(x_adv, dtype=np.float64)
    d = a - x
    if budget.norm == "linf":
        ok = np.abs(d).reshape(len(d), -1).max(axis=1, initial=0.0) <= budget.epsilon
    else:
        ok = _flat_norm(d) <= budget.epsilon
    box = ((a >= 0) & (a <= 1)).reshape(len(a), -1).all(axis=1)
    return ok & box


def apply_delta(x, delta, budget: Budget) -> np.ndarray:
    """``x + project(delta)`` in the dtype of ``x``, nudged so that the
    stored values satisfy :func:`within_budget` exactly."""
    x = np.asarray(x)
    dt = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float32
    adv = (x.astype(np.float64) + project(delta, budget, x)).astype(dt)
    adv = np.clip(adv, 0, 1)
    for _ in range(64):
        bad = ~within_budget(x, adv, budget)
        if not bad.any():
            return adv
        # rounding to the storage dtype can step just outside; move those
        # examples one ulp back towards the clean input
        rows = np.flatnonzero(bad)
        adv[rows] = np.nextafter(adv[rows], x[rows].astype(dt))
    raise AssertionError("could not bring perturbation inside the budget")
