"""Gradient-free random search over square-shaped perturbations."""

from __future__ import annotations

import numpy as np

from ..models import Pipeline
from ..nn import margin
from ..rng import derive_stream, integers, uniforms
from .core import AttackConfig, AttackOutcome, Budget, apply_delta

# fraction-of-pixels schedule checkpoints, expressed for a 10000-query run
_P_SCHEDULE = (10, 50, 200, 500, 1000, 2000, 4000, 6000, 8000)


def p_selection(p_init, it, n_iters):
    """Square area fraction at iteration ``it``: halves at fixed checkpoints."""
    it = int(it / n_iters * 10000)
    return p_init / 2 ** sum(it > c for c in _P_SCHEDULE)


def _signs(s, shape):
    u, s = uniforms(s, int(np.prod(shape)))
    return np.where(u < 0.5, -1.0, 1.0).reshape(shape), s


def _margin(model, x, y):
    return margin(model.logits(x).astype(np.float64), y)


def _linf_init(x, eps, s):
    n, _, w, c = x.shape
    stripes, s = _signs(s, (n, 1, w, c))
    return np.broadcast_to(stripes * eps, x.shape).copy(), s


def _l2_init(x, eps, s):
    n, h, w, c = x.shape
    signs, s = _signs(s, (n, 1, 1, c))
    delta = np.broadcast_to(signs, x.shape).copy()
    return delta * eps / np.sqrt(h * w * c), s


def _l2_bump(size):
    # a pyramid-shaped bump of unit L2 norm
    r = np.arange(size)
    d = np.minimum(r, size - 1 - r)
    bump = (np.minimum.outer(d, d) + 1).astype(np.float64)
    return bump / np.linalg.norm(bump)


def square_attack(model: Pipeline, x, y, budget: Budget,
                  cfg: AttackConfig = AttackConfig("square"), key: int = 0):
    """Maximise the margin loss using only forward queries.

    Each restart spends at most ``cfg.queries`` queries per example (the
    initial point counts as one).  A candidate replaces the current point
    only when it raises the margin, so the accepted loss never decreases.
    Examples stop querying once misclassified.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    n, h, w, c = x.shape
    eps = budget.epsilon
    best_x = x.copy()
    best_loss = np.full(n, -np.inf)
    queries = np.zeros(n, np.int64)
    history = []  # per restart: (iterations, examples) accepted losses

    for r in range(cfg.restarts):
        s = derive_stream(key, f"{cfg.label}-square-restart({r})")
        todo = np.flatnonzero(best_loss <= 0)
        if not len(todo):
            break
        xs, ys = x[todo].astype(np.float64), y[todo]
        if budget.norm == "linf":
            delta, s = _linf_init(xs, eps, s)
        else:
            delta, s = _l2_init(xs, eps, s)
        cur = apply_delta(x[todo], delta, budget)
        delta = cur.astype(np.float64) - xs
        loss = _margin(model, cur, ys)
        used = np.ones(len(todo), np.int64)
        trail = [loss.copy()]
        for it in range(cfg.queries - 1):
            active = np.flatnonzero(loss <= 0)
            if not len(active):
                break
            p = p_selection(cfg.p_init, it, cfg.queries)
            size = int(min(max(round(np.sqrt(p * h * w)), 1), h - 1 if h > 1 else 1))
            top, s = integers(s, len(active), h - size + 1)
            left, s = integers(s, len(active), w - size + 1)
            cand = delta[active].copy()
            if budget.norm == "linf":
                signs, s = _signs(s, (len(active), c))
                for k in range(len(active)):
                    cand[k, top[k]:top[k] + size, left[k]:left[k] + size] = signs[k] * eps
            else:
                signs, s = _signs(s, (len(active), c))
                bump = _l2_bump(size)[:, :, None]
                for k in range(len(active)):
                    win = cand[k, top[k]:top[k] + size, left[k]:left[k] + size]
                    mass = np.linalg.norm(win)
                    # move the window's mass onto a fresh bump, then rescale the
                    # whole perturbation back onto the sphere
                    win[...] = bump * signs[k] * max(mass, eps / np.sqrt(h * w / size ** 2))
                    norm = np.linalg.norm(cand[k])
                    if norm > 0:
                        cand[k] *= eps / norm
            cand_x = apply_delta(x[todo[active]], cand, budget)
            cand_loss = _margin(model, cand_x, ys[active])
            used[active] += 1
            better = cand_loss > loss[active]
            acc = active[better]
            delta[acc] = cand_x[better].astype(np.float64) - xs[acc]
            cur[acc] = cand_x[better]
            loss[acc] = cand_loss[better]
            trail.append(loss.copy())
        queries[todo] += used
        history.append(np.stack(trail))
        improve = loss > best_loss[todo]
        best_x[todo[improve]] = cur[improve]
        best_loss[todo[improve]] = loss[improve]
    return AttackOutcome(best_x, best_loss > 0, best_loss, queries, "square", budget, history)
