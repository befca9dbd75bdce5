"""Projected gradient attacks: untargeted PGD, multi-targeted PGD and BPDA."""

from __future__ import annotations

import logging

import numpy as np

from ..models import NetworkStage, Pipeline, TransformStage
from ..nn import margin, softmax_cross_entropy, targeted_margin
from ..rng import derive_stream, gaussians, uniforms
from .core import AttackConfig, AttackOutcome, Budget, apply_delta

log = logging.getLogger(__name__)


def random_start(x, budget: Budget, s):
    """A uniform draw from the norm ball around each example."""
    n, size = len(x), int(np.prod(x.shape[1:]))
    if budget.norm == "linf":
        u, s = uniforms(s, n * size)
        delta = (2 * u - 1) * budget.epsilon
    else:
        z, s = gaussians(s, n * size)
        z = z.reshape(n, size)
        r, s = uniforms(s, n)
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        delta = z * (budget.epsilon * r ** (1.0 / size))[:, None]
    return delta.reshape(x.shape), s


def _ascent_direction(grad, norm):
    if norm == "linf":
        return np.sign(grad)
    flat = grad.reshape(len(grad), -1)
    n = np.linalg.norm(flat, axis=1)
    return (flat / np.maximum(n, 1e-12)[:, None]).reshape(grad.shape)


def _better(succ_a, loss_a, succ_b, loss_b):
    """Lexicographic (success, loss) comparison, elementwise a > b."""
    return (succ_a & ~succ_b) | ((succ_a == succ_b) & (loss_a > loss_b))


def _run_restarts(model: Pipeline, x, y, budget, cfg, key, objective, kind):
    """Shared PGD loop.

    ``objective(r)`` returns ``loss_fn(logits, rows) -> (values, dlogits)``
    for restart ``r``.  Each restart starts from its own random point; the
    kept candidate per example is the best iterate by (misclassified,
    untargeted margin).
    """
    x = np.asarray(x)
    y = np.asarray(y)
    n = len(x)
    best_x = x.copy()
    best_succ = np.zeros(n, bool)
    best_loss = np.full(n, -np.inf)
    queries = np.zeros(n, np.int64)
    alpha = cfg.alpha(budget)

    def consider(x_cur, logits, live):
        nonlocal best_x, best_succ, best_loss
        succ = logits.argmax(-1) != y
        loss = margin(logits.astype(np.float64), y)
        take = live & _better(succ, loss, best_succ, best_loss)
        best_x[take], best_succ[take], best_loss[take] = x_cur[take], succ[take], loss[take]

    for r in range(cfg.restarts):
        s = derive_stream(key, f"{cfg.label}-{kind}-restart({r})")
        delta, s = random_start(x, budget, s)
        x_cur = apply_delta(x, delta, budget)
        live = np.ones(n, bool)
        loss_fn = objective(r)
        for _ in range(cfg.steps):
            _, grad, logits = model.value_and_grad(x_cur, loss_fn)
            queries += 1
            finite = np.isfinite(grad).reshape(n, -1).all(axis=1)
            if not finite.all():
                log.warning("%s restart %d: non-finite gradient for %d example(s); skipped",
                            kind, r, int((~finite & live).sum()))
                live &= finite
            consider(x_cur, logits, live)
            step = alpha * _ascent_direction(np.where(live.reshape((-1,) + (1,) * (x.ndim - 1)),
                                                      grad, 0), budget.norm)
            x_cur = apply_delta(x, x_cur.astype(np.float64) - x + step, budget)
        logits = model.logits(x_cur)
        queries += 1
        consider(x_cur, logits, live)
    return AttackOutcome(best_x, best_succ, best_loss, queries, kind, budget)


def pgd(model: Pipeline, x, y, budget: Budget, cfg: AttackConfig = AttackConfig(), key: int = 0):
    """Untargeted PGD on the cross-entropy with random restarts."""
    y = np.asarray(y)

    def objective(_):
        return lambda z, sl: softmax_cross_entropy(z.astype(np.float64), y[sl])

    return _run_restarts(model, x, y, budget, cfg, key, objective, "pgd")


def mt_target(y, restart, num_classes):
    """Round-robin target class for ``restart``, never equal to ``y``."""
    return (np.asarray(y) + 1 + restart % (num_classes - 1)) % num_classes


def mt_pgd(model: Pipeline, x, y, budget: Budget, cfg: AttackConfig = AttackConfig("mt-pgd"),
           key: int = 0, num_classes: int = 10):
    """Multi-targeted PGD: restart ``r`` maximises ``logit[t_r] - logit[y]``
    with targets cycling over all wrong classes."""
    if num_classes < 2:
        raise ValueError("multi-targeted attacks need at least two classes")
    y = np.asarray(y)

    def objective(r):
        t = mt_target(y, r, num_classes)
        return lambda z, sl: targeted_margin(z.astype(np.float64), y[sl], t[sl])

    return _run_restarts(model, x, y, budget, cfg, key, objective, "mt-pgd")


def bpda_model(transform, classifier_stage: NetworkStage, surrogate="identity", name="bpda"):
    """Exact ``transform`` forward, surrogate backward, then the classifier."""
    return Pipeline([TransformStage(transform, surrogate, "transform"), classifier_stage], name)


def bpda_attack(transform, classifier_stage: NetworkStage, x, y, budget: Budget,
                cfg: AttackConfig = AttackConfig(), key: int = 0, surrogate="identity"):
    model = bpda_model(transform, classifier_stage, surrogate)
    runner = mt_pgd if cfg.kind == "mt-pgd" else pgd
    return runner(model, x, y, budget, cfg, key)
