"""Central finite-difference oracle for layer and network gradients."""

import numpy as np

from linac.nn import Sequential
from linac.rng import derive_stream

H = 1e-6


def _rel(a, b):
    return abs(a - b) / max(abs(a) + abs(b), 1e-8)


def _away_from_kinks(rs, shape):
    x = rs.normal(size=shape)
    # keep ReLU inputs clear of the non-differentiable point
    return np.where(np.abs(x) < 0.05, x + np.sign(x + 1e-12) * 0.1, x)


def check_network_gradients(net: Sequential, in_shape, probes=20, seed=0):
    """Worst relative error over ``probes`` random input and parameter coordinates."""
    rs = np.random.default_rng(seed)
    params, _ = net.init_params(derive_stream(seed, "gradcheck"), np.float64)
    # non-zero biases so their gradients are exercised too
    params = [{k: v + (0.1 * rs.normal(size=v.shape) if k == "b" else 0) for k, v in p.items()}
              for p in params]
    x = _away_from_kinks(rs, in_shape)
    out_shape = net.output_shape(in_shape)
    r = rs.normal(size=out_shape)

    def f(params, x):
        return float((net(params, x) * r).sum())

    y, caches = net.forward(params, x)
    gx, grads = net.backward(params, caches, r)
    worst = 0.0
    for _ in range(probes):
        idx = tuple(rs.integers(0, s) for s in x.shape)
        xp, xm = x.copy(), x.copy()
        xp[idx] += H
        xm[idx] -= H
        worst = max(worst, _rel(gx[idx], (f(params, xp) - f(params, xm)) / (2 * H)))
    slots = [(i, k) for i, p in enumerate(params) for k in p]
    for n in range(probes if slots else 0):
        i, k = slots[n % len(slots)]
        idx = tuple(rs.integers(0, s) for s in params[i][k].shape)
        pp = [dict(p) for p in params]
        pm = [dict(p) for p in params]
        pp[i][k] = params[i][k].copy()
        pm[i][k] = params[i][k].copy()
        pp[i][k][idx] += H
        pm[i][k][idx] -= H
        worst = max(worst, _rel(grads[i][k][idx], (f(pp, x) - f(pm, x)) / (2 * H)))
    return worst


def check_layer_gradients(layer, in_shape, probes=20, seed=0):
    return check_network_gradients(Sequential([layer]), in_shape, probes, seed)
