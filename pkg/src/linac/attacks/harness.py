"""Running attacks across models: transfer matrices, bypass attacks and key
guessing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..models import Pipeline
from .core import AttackConfig, Budget
from .gradient import mt_pgd, pgd
from .square import square_attack

RUNNERS = {"pgd": pgd, "mt-pgd": mt_pgd, "square": square_attack}


def run_attack(model: Pipeline, x, y, budget: Budget, cfg: AttackConfig, key: int = 0):
    return RUNNERS[cfg.kind](model, x, y, budget, cfg, key)


@dataclass
class TransferResult:
    sources: list
    attacks: list
    clean_correct: np.ndarray            # (n,)
    robust_correct: np.ndarray           # (attacks, sources, n)
    outcomes: dict

    @property
    def shape(self):
        return self.robust_correct.shape[:2]


def transfer_attack(sources: dict, target: Pipeline, attacks: dict, x, y,
                    budget: Budget, key: int = 0) -> TransferResult:
    """Craft perturbations on every source model with every attack and score
    them on ``target``.

    ``sources`` and ``attacks`` map names to models and configs.  A source
    that is the target itself gives the white-box result.
    """
    y = np.asarray(y)
    clean = target.predict(x) == y
    grid = np.zeros((len(attacks), len(sources), len(y)), bool)
    outcomes = {}
    for a, (aname, cfg) in enumerate(attacks.items()):
        for s, (sname, model) in enumerate(sources.items()):
            out = run_attack(model, x, y, budget, cfg, key)
            outcomes[(aname, sname)] = out
            grid[a, s] = target.predict(out.x_adv) == y
    return TransferResult(list(sources), list(attacks), clean, grid, outcomes)


def pba_attack(bypass_model: Pipeline, defended: Pipeline, x, y, budget: Budget,
               cfg: AttackConfig = AttackConfig(), key: int = 0):
    """Attack the bypass classifier; return its outcome and the correctness of
    the defended pipeline on the resulting inputs."""
    out = run_attack(bypass_model, x, y, budget, cfg, key)
    defended_correct = defended.predict(out.x_adv) == np.asarray(y)
    return out, defended_correct


def brute_force_keys(classifier: Pipeline, transform, keys, x, y, batch_size: int = 100):
    """Accuracy of ``classifier`` on ``transform(x, key)`` for every key.

    Evaluates a fixed batch of ``batch_size`` examples per key and returns
    ``[(key, accuracy), ...]`` sorted by accuracy, best first (ties keep the
    input order).
    """
    keys = list(keys)
    if not keys:
        raise ValueError("need at least one candidate key")
    xb, yb = np.asarray(x)[:batch_size], np.asarray(y)[:batch_size]
    table = []
    for k in keys:
        acc = float(np.mean(classifier.predict(transform(xb, k)) == yb))
        table.append((k, acc))
    order = sorted(range(len(table)), key=lambda i: -table[i][1])
    return [table[i] for i in order]

