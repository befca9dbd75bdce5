"""Implicit neural representations of single images.

An image is fitted by a coordinate MLP ``Phi = h^L o ... o h^0`` that maps a
positionally encoded pixel location to its three colour values.  ``h^0`` to
``h^{L-1}`` are ReLU hidden layers of width ``H``; ``h^L`` is the linear
colour head.  Layer indices are 0-based throughout, so ``repr_layer=K``
selects the post-ReLU output of ``h^K`` and ``K = L`` is the colour output.

Fitting is vectorised over a stack of images: every image owns its own
parameters, but images fitted under the same key start from the same
initial parameters and see the same pixel order in every epoch.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np

from . import lnt1
from .nn.layers import Dense, ReLU
from .nn.network import Sequential
from .nn.optim import cosine_lr
from .rng import INIT, REFERENCE_KEY, derive_stream, permutation, shuffle_epoch


GRIDS = ("centers", "endpoints")


class FitError(FloatingPointError):
    pass


@dataclass(frozen=True)
class InrArch:
    layers: int = 5
    width: int = 256
    freqs: int = 5
    grid: str = "centers"

    def __post_init__(self):
        if self.layers < 1 or self.width < 1 or self.freqs < 1:
            raise ValueError(f"invalid INR architecture {self}")
        if self.grid not in GRIDS:
            raise ValueError(f"grid must be one of {GRIDS}, got {self.grid!r}")

    @property
    def input_dim(self):
        return 4 * self.freqs

    def dims(self):
        """``(fan_in, fan_out)`` of each dense layer, first to last."""
        sizes = [self.input_dim] + [self.width] * self.layers + [3]
        return list(zip(sizes[:-1], sizes[1:]))

    def network(self) -> Sequential:
        layers = []
        for i, (n_in, n_out) in enumerate(self.dims()):
            layers.append(Dense(n_in, n_out))
            if i < self.layers:
                layers.append(ReLU())
        return Sequential(layers)


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    alpha: float = 1e-4
    key: int = REFERENCE_KEY

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")

    def steps_per_epoch(self, height, width):
        return (height * width) // self.batch_size

    def total_steps(self, height, width):
        return self.steps_per_epoch(height, width) * self.epochs


def pixel_grid(height: int, width: int, grid: str = "centers") -> np.ndarray:
    """``(I, J, 2)`` coordinates in [-1, 1]; a unit extent maps to 0.

    ``"centers"`` places pixel ``i`` at ``(2i + 1)/n - 1``.  ``"endpoints"``
    uses ``2i/(n - 1) - 1``, which puts the first and last rows (and
    columns) at -1 and +1 where the period-2 encoding cannot tell them
    apart.
    """
    if grid not in GRIDS:
        raise ValueError(f"grid must be one of {GRIDS}, got {grid!r}")

    def axis(n):
        if n == 1:
            return np.zeros(1)
        if grid == "centers":
            return (2.0 * np.arange(n) + 1.0) / n - 1.0
        return 2.0 * np.arange(n) / (n - 1) - 1.0

    rows, cols = np.meshgrid(axis(height), axis(width), indexing="ij")
    return np.stack([rows, cols], axis=-1)


def positional_encode(d, freqs: int) -> np.ndarray:
    """``[sin(2^0 pi d), cos(2^0 pi d), ..., sin(2^{F-1} pi d), cos(2^{F-1} pi d)]``."""
    d = np.asarray(d, dtype=np.float64)[..., None]
    angles = np.pi * d * (2.0 ** np.arange(freqs))
    out = np.empty(angles.shape[:-1] + (2 * freqs,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def encode_grid(height: int, width: int, freqs: int, grid: str = "centers") -> np.ndarray:
    """Row-major ``(I*J, 4F)`` network inputs for every pixel."""
    grid = pixel_grid(height, width, grid).reshape(-1, 2)
    return np.concatenate([positional_encode(grid[:, 0], freqs),
                           positional_encode(grid[:, 1], freqs)], axis=-1)


def initial_params(arch: InrArch, key: int, dtype=np.float32):
    """Starting parameters shared by every image fitted under ``key``."""
    params, _ = arch.network().init_params(derive_stream(key, INIT), dtype)
    return [p for p in params if p]


def epoch_orders(key: int, n_pixels: int, epochs: int) -> np.ndarray:
    """``(epochs, n_pixels)`` pixel visiting order, one fresh shuffle per epoch."""
    return np.stack([permutation(derive_stream(key, shuffle_epoch(e)), n_pixels)[0]
                     for e in range(epochs)])


class InrParams:
    """Fitted parameters for a stack of ``B`` images (``B`` may be 1).

    ``weights[l]`` has shape ``(B, fan_in, fan_out)`` and ``biases[l]``
    ``(B, fan_out)``.
    """

    def __init__(self, arch: InrArch, weights, biases):
        self.arch = arch
        self.weights = list(weights)
        self.biases = list(biases)
        dims = arch.dims()
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ValueError("parameter count does not match architecture")
        for (n_in, n_out), W, b in zip(dims, self.weights, self.biases):
            if W.shape[1:] != (n_in, n_out) or b.shape[1:] != (n_out,) or len(W) != len(b):
                raise ValueError("parameter shapes do not match architecture")

    def __len__(self):
        return len(self.weights[0])

    def __getitem__(self, i):
        sl = slice(i, i + 1) if isinstance(i, (int, np.integer)) else i
        return InrParams(self.arch, [W[sl].copy() for W in self.weights],
                         [b[sl].copy() for b in self.biases])

    def layer_params(self, i=0):
        """Parameters of image ``i`` in :class:`Sequential` layout."""
        out = []
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            out.append({"W": W[i], "b": b[i]})
            if l < self.arch.layers:
                out.append({})
        return out

    def _coords(self, height, width):
        enc = encode_grid(height, width, self.arch.freqs, self.arch.grid)
        return enc.astype(self.weights[0].dtype)

    def _forward(self, coords, upto):
        a = coords
        for l in range(upto + 1):
            a = np.matmul(a, self.weights[l]) + self.biases[l][:, None, :]
            if l < self.arch.layers:
                np.maximum(a, 0, out=a)
        return a

    def hidden(self, repr_layer: int, height: int, width: int) -> np.ndarray:
        """``(B, I, J, H)`` post-activation outputs of hidden layer ``repr_layer``."""
        if not 0 <= repr_layer < self.arch.layers:
            raise ValueError(
                f"representation layer must lie in [0, {self.arch.layers - 1}], got {repr_layer}")
        coords = self._coords(height, width)
        return self._forward(coords, repr_layer).reshape(len(self), height, width, -1)

    def reconstruct(self, height: int, width: int) -> np.ndarray:
        coords = self._coords(height, width)
        return self._forward(coords, self.arch.layers).reshape(len(self), height, width, 3)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            lnt1.save(directory / f"layer{l}.W.lnt1", W)
            lnt1.save(directory / f"layer{l}.b.lnt1", b)
        (directory / "arch.json").write_text(json.dumps(asdict(self.arch), sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        arch = InrArch(**json.loads((directory / "arch.json").read_text()))
        n = len(arch.dims())
        return cls(arch, [lnt1.load(directory / f"layer{l}.W.lnt1") for l in range(n)],
                   [lnt1.load(directory / f"layer{l}.b.lnt1") for l in range(n)])


def hidden_activations(params: InrParams, coord, repr_layer: int, index: int = 0) -> np.ndarray:
    """Hidden-layer ``repr_layer`` activations of image ``index`` at one coordinate."""
    if not 0 <= repr_layer < params.arch.layers:
        raise ValueError(
            f"representation layer must lie in [0, {params.arch.layers - 1}], got {repr_layer}")
    enc = np.concatenate([positional_encode(coord[0], params.arch.freqs),
                          positional_encode(coord[1], params.arch.freqs)])
    sub = params[index]
    return sub._forward(enc[None, :].astype(sub.weights[0].dtype), repr_layer)[0, 0]


def reconstruction_error(recon, images) -> np.ndarray:
    """Per-image mean over pixels of the summed squared channel error."""
    diff = np.asarray(recon, dtype=np.float64) - np.asarray(images, dtype=np.float64)
    return (diff ** 2).sum(axis=-1).mean(axis=(-2, -1))


def reconstruct(params: InrParams, height: int, width: int, images=None):
    """Colour reconstruction and, when ``images`` is given, the per-image error."""
    recon = params.reconstruct(height, width)
    if images is None:
        return recon, None
    return recon, reconstruction_error(recon, np.reshape(images, recon.shape))


@numba.njit(cache=True, error_model="numpy")
def _adam_fused(p, g, m, v, c_b1, c_1mb1, c_b2, c_1mb2, step_size, denom_scale, eps, tiny):
    # same operation order as nn.optim.adam_update, including the subnormal flush
    for i in range(p.size):
        gi = g[i]
        mi = c_b1 * m[i] + c_1mb1 * gi
        vi = c_b2 * v[i] + c_1mb2 * (gi * gi)
        if abs(mi) < tiny:
            mi = mi * 0
        if vi < tiny:
            vi = vi * 0
        m[i] = mi
        v[i] = vi
        p[i] = p[i] - step_size * (mi / (np.sqrt(vi) * denom_scale + eps))


class _FlatStack:
    """Layer-major flat buffer: ``[W0 for all images, b0 for all, W1, ...]``."""

    def __init__(self, dims, n, dtype):
        self.dims = dims
        sizes = []
        for n_in, n_out in dims:
            sizes += [n * n_in * n_out, n * n_out]
        self.size = sum(sizes)
        self.n = n
        self.dtype = dtype

    def views(self, buf):
        ws, bs, off = [], [], 0
        for n_in, n_out in self.dims:
            k = self.n * n_in * n_out
            ws.append(buf[off:off + k].reshape(self.n, n_in, n_out))
            off += k
            bs.append(buf[off:off + self.n * n_out].reshape(self.n, n_out))
            off += self.n * n_out
        return ws, bs


def batch_loss_grads(Ws, bs, inputs, targets, scale, gWs, gbs):
    """One forward/backward pass of a stack of MLPs.

    ``inputs`` is ``(B, M, 4F)`` and ``targets`` ``(B, M, 3)``.  Writes the
    gradients of ``scale/2 * sum ||Phi(p) - x(p)||^2`` into ``gWs``/``gbs``
    and returns the residuals ``Phi(p) - x(p)``.
    """
    n_layers = len(Ws)
    a = inputs
    acts, masks = [a], []
    for l in range(n_layers):
        z = np.matmul(a, Ws[l])
        z += bs[l][:, None, :]
        if l < n_layers - 1:
            mask = z > 0
            z *= mask
            masks.append(mask)
            acts.append(z)
        a = z
    diff = a - targets
    g = diff * scale
    for l in range(n_layers - 1, -1, -1):
        np.matmul(acts[l].transpose(0, 2, 1), g, out=gWs[l])
        gbs[l][...] = g.sum(axis=1)
        if l:
            g = np.matmul(g, Ws[l].transpose(0, 2, 1))
            g *= masks[l - 1]
    return diff


@dataclass
class FitResult:
    params: InrParams
    trace: np.ndarray  # (B, steps) per-pixel squared error of each mini-batch
    steps: int


def fit_inr_batch(images, cfg: FitConfig, arch: InrArch, keys=None, dtype=np.float32) -> FitResult:
    """Fit one INR per image in a ``(B, I, J, 3)`` stack.

    ``keys`` gives a key per image; by default every image uses ``cfg.key``.
    Runs exactly ``floor(I*J/M) * N`` Adam steps on the per-batch loss
    ``sum ||Phi(p) - x(p)||^2 / (M*I*J)`` under a cosine schedule spanning
    all steps.
    """
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"expected a (B, I, J, 3) image stack, got {images.shape}")
    if not np.all(np.isfinite(images)):
        raise FitError("input image contains non-finite values")
    n, height, width, _ = images.shape
    n_pix = height * width
    m_batch = cfg.batch_size
    per_epoch = cfg.steps_per_epoch(height, width)
    if per_epoch < 1:
        raise ValueError(f"mini-batch size {m_batch} exceeds the {n_pix} pixels of the image")
    total = per_epoch * cfg.epochs
    if keys is None:
        keys = [cfg.key] * n
    if len(keys) != n:
        raise ValueError("one key per image is required")

    dims = arch.dims()
    flat = _FlatStack(dims, n, dtype)
    P = np.empty(flat.size, dtype=dtype)
    G = np.zeros(flat.size, dtype=dtype)
    mom = np.zeros(flat.size, dtype=dtype)
    vel = np.zeros(flat.size, dtype=dtype)
    Ws, bs = flat.views(P)
    gWs, gbs = flat.views(G)

    distinct = list(dict.fromkeys(keys))
    orders = {}
    for k in distinct:
        init = initial_params(arch, k, dtype)
        rows = [i for i, kk in enumerate(keys) if kk == k]
        for l in range(len(dims)):
            Ws[l][rows] = init[l]["W"]
            bs[l][rows] = init[l]["b"]
        orders[k] = epoch_orders(k, n_pix, cfg.epochs)
    order = np.stack([orders[k] for k in keys], axis=1)  # (epochs, B, n_pix)

    coords = encode_grid(height, width, arch.freqs, arch.grid).astype(dtype)
    targets = images.reshape(n, n_pix, 3).astype(dtype)
    scale = dtype(2.0 / (m_batch * n_pix))
    trace = np.empty((n, total))
    dt = np.dtype(dtype).type
    b1, b2 = dt(0.9), dt(0.999)
    consts = (b1, dt(1) - b1, b2, dt(1) - b2)
    tiny = dt(np.finfo(dtype).tiny)

    step = 0
    for epoch in range(cfg.epochs):
        for mb in range(per_epoch):
            idx = order[epoch, :, mb * m_batch:(mb + 1) * m_batch]
            # overflow is reported below as a FitError
            with np.errstate(over="ignore", invalid="ignore"):
                diff = batch_loss_grads(Ws, bs, coords[idx],
                                        np.take_along_axis(targets, idx[..., None], axis=1),
                                        scale, gWs, gbs)
            sq = (diff.astype(np.float64) ** 2).sum(axis=(1, 2))
            if not np.all(np.isfinite(sq)):
                bad = int(np.flatnonzero(~np.isfinite(sq))[0])
                raise FitError(f"non-finite loss for image {bad} at step {step}")
            trace[:, step] = sq / m_batch
            t = step + 1
            lr = cosine_lr(step, total, cfg.learning_rate, cfg.alpha)
            _adam_fused(P, G, mom, vel, *consts, dt(lr / (1.0 - 0.9 ** t)),
                        dt(1.0 / math.sqrt(1.0 - 0.999 ** t)), dt(1e-8), tiny)
            step += 1

    return FitResult(InrParams(arch, [w.copy() for w in Ws], [b.copy() for b in bs]), trace, total)


def fit_inr(image, cfg: FitConfig, arch: InrArch, dtype=np.float32):
    """Fit a single ``(I, J, 3)`` image; returns ``(InrParams, loss trace)``."""
    res = fit_inr_batch(np.asarray(image)[None], cfg, arch, dtype=dtype)
    return res.params, res.trace[0]
