"""Optimisers, learning-rate schedules and parameter averaging.

All update functions are pure: they return fresh parameters and state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .network import tree_map


class OptimizerShapeError(ValueError):
    pass


def _check_same(params, other, what):
    if len(params) != len(other):
        raise OptimizerShapeError(f"{what}: group count mismatch")
    for p, o in zip(params, other):
        if set(p) != set(o):
            raise OptimizerShapeError(f"{what}: parameter names differ")
        for k in p:
            if np.shape(p[k]) != np.shape(o[k]):
                raise OptimizerShapeError(
                    f"{what}: {k} has shape {np.shape(o[k])}, want {np.shape(p[k])}")


@dataclass(frozen=True)
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, **kwargs) -> AdamState:
    zeros = tree_map(np.zeros_like, params)
    return AdamState(m=zeros, v=tree_map(np.zeros_like, params), **kwargs)


def adam_update(p, g, m, v, lr, t, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam on single arrays; returns ``(p, m, v)``.

    The operation order here is mirrored exactly by the fused kernel used for
    stacked INR fitting, so both paths agree bit for bit.  Moments that decay
    into the subnormal range are flushed to zero; subnormal arithmetic is
    orders of magnitude slower and those values cannot move a parameter.
    """
    dt = p.dtype.type
    b1, b2 = dt(beta1), dt(beta2)
    tiny = np.finfo(p.dtype).tiny
    m = b1 * m + (dt(1) - b1) * g
    v = b2 * v + (dt(1) - b2) * (g * g)
    m = np.where(np.abs(m) < tiny, m * 0, m)
    v = np.where(v < tiny, v * 0, v)
    step_size = dt(lr / (1.0 - beta1 ** t))
    denom_scale = dt(1.0 / math.sqrt(1.0 - beta2 ** t))
    p = p - step_size * (m / (np.sqrt(v) * denom_scale + dt(eps)))
    return p, m, v


def adam_step(params, grads, st: AdamState, lr):
    _check_same(params, grads, "adam grads")
    _check_same(params, st.m, "adam state")
    t = st.t + 1
    new_p, new_m, new_v = [], [], []
    for gp, gg, gm, gv in zip(params, grads, st.m, st.v):
        dp, dm, dv = {}, {}, {}
        for k in gp:
            dp[k], dm[k], dv[k] = adam_update(
                gp[k], gg[k].astype(gp[k].dtype), gm[k], gv[k], lr, t, st.beta1, st.beta2, st.eps)
        new_p.append(dp), new_m.append(dm), new_v.append(dv)
    return new_p, replace(st, m=new_m, v=new_v, t=t)


@dataclass(frozen=True)
class MomentumState:
    velocity: list
    momentum: float = 0.9
    nesterov: bool = True


def momentum_init(params, momentum=0.9, nesterov=True) -> MomentumState:
    return MomentumState(tree_map(np.zeros_like, params), momentum, nesterov)


def nesterov_step(params, grads, st: MomentumState, lr, weight_decay=0.0):
    """SGD with (Nesterov) momentum and L2 weight decay folded into the gradient.

    ``v <- m v + g + wd p``; the parameter moves by ``lr (m v + g + wd p)``
    in Nesterov mode and by ``lr v`` otherwise.
    """
    _check_same(params, grads, "sgd grads")
    _check_same(params, st.velocity, "sgd state")
    new_p, new_v = [], []
    for gp, gg, gv in zip(params, grads, st.velocity):
        dp, dv = {}, {}
        for k in gp:
            p = gp[k]
            dt = p.dtype.type
            g = gg[k].astype(p.dtype) + dt(weight_decay) * p
            v = dt(st.momentum) * gv[k] + g
            step = dt(st.momentum) * v + g if st.nesterov else v
            dp[k], dv[k] = p - dt(lr) * step, v
        new_p.append(dp), new_v.append(dv)
    return new_p, replace(st, velocity=new_v)


def cosine_lr(t, total, base, alpha=0.0):
    """Cosine decay from ``base`` at ``t=0`` to ``alpha * base`` at ``t=total``."""
    if total < 1:
        raise ValueError("total steps must be >= 1")
    t = min(max(t, 0), total)
    return base * (alpha + (1 - alpha) * 0.5 * (1 + math.cos(math.pi * t / total)))


def step_lr(epoch, base, drops=(), factor=0.1):
    """Piecewise-constant schedule multiplied by ``factor`` at each drop epoch."""
    return base * factor ** sum(epoch >= d for d in drops)


@dataclass(frozen=True)
class EmaState:
    shadow: list
    decay: float = 0.995

    def __post_init__(self):
        if not 0 <= self.decay < 1:
            raise ValueError("EMA decay must lie in [0, 1)")


def ema_init(params, decay=0.995) -> EmaState:
    return EmaState(tree_map(np.copy, params), decay)


def ema_update(st: EmaState, params) -> EmaState:
    _check_same(st.shadow, params, "ema")
    r = st.decay

    def upd(s, p):
        dt = s.dtype.type
        return dt(r) * s + dt(1 - r) * p

    return replace(st, shadow=tree_map(upd, st.shadow, params))
