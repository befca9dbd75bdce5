"""Input transformations: keyed LINAC activation images, their colour
reconstructions, block pixel shuffling, channel standardisation and CutMix."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .inr import FitConfig, InrArch, fit_inr_batch
from .rng import SHUFFLE, RngStream, derive_stream, permutation, uniforms

WORKERS_ENV = "LINAC_WORKERS"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def check_images(x, channels=None, name="images") -> np.ndarray:
    """Validate a ``(B, I, J, C)`` stack of finite values."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"{name} must have shape (B, I, J, C), got {x.shape}")
    if channels is not None and x.shape[-1] != channels:
        raise ValueError(f"{name} must have {channels} channels, got {x.shape[-1]}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float32)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contain non-finite values")
    return x


# -- normalisation ---------------------------------------------------------

@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple
    std: tuple

    def __post_init__(self):
        if len(self.mean) != len(self.std):
            raise ValueError("mean and std lengths differ")
        if not all(s > 0 for s in self.std):
            raise ValueError(f"every channel std must be > 0, got {self.std}")

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mean"]), tuple(d["std"]))


def fit_normalization(images, min_std: float | None = None) -> NormalizationStats:
    """Per-channel mean and std.  With ``min_std`` set, channels whose std
    falls below it (dead activations) get std 1 instead of raising."""
    x = np.asarray(images, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot fit normalisation on an empty set")
    flat = x.reshape(-1, x.shape[-1])
    mean, std = flat.mean(axis=0), flat.std(axis=0)
    if min_std is not None:
        std = np.where(std < min_std, 1.0, std)
    if np.any(std <= 0):
        raise ValueError(f"channel(s) {np.flatnonzero(std <= 0).tolist()} are constant")
    return NormalizationStats(tuple(mean.tolist()), tuple(std.tolist()))


def apply_normalization(x, stats: NormalizationStats):
    x = np.asarray(x)
    dt = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float32
    mean = np.asarray(stats.mean, dtype=dt)
    std = np.asarray(stats.std, dtype=dt)
    return ((x - mean) / std).astype(dt, copy=False)


def invert_normalization(x, stats: NormalizationStats):
    x = np.asarray(x)
    return (x * np.asarray(stats.std, x.dtype) + np.asarray(stats.mean, x.dtype)).astype(x.dtype)


# -- LINAC -----------------------------------------------------------------

def _fit_chunk(args):
    images, key, cfg, arch, repr_layer = args
    res = fit_inr_batch(images, cfg, arch, keys=[key] * len(images))
    height, width = images.shape[1:3]
    if repr_layer == arch.layers:
        out = res.params.reconstruct(height, width)
    else:
        out = res.params.hidden(repr_layer, height, width)
    return out, res.trace


def _run_fits(images, key, cfg, arch, repr_layer, workers, chunk):
    images = check_images(images, 3)
    if not 0 <= repr_layer <= arch.layers:
        raise ValueError(f"representation layer must lie in [0, {arch.layers}], got {repr_layer}")
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    n = len(images)
    images = images.astype(np.float32)
    jobs = [(images[i:i + chunk], key, cfg, arch, repr_layer) for i in range(0, n, chunk)]
    if workers == 1 or len(jobs) == 1:
        parts = [_fit_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_fit_chunk, jobs))
    if not parts:
        return np.empty((0,) + images.shape[1:3] + (0,), np.float32), np.empty((0, 0))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def linac_transform(images, key, cfg: FitConfig | None = None, arch: InrArch | None = None,
                    repr_layer: int = 2, stats: NormalizationStats | None = None,
                    workers: int | None = None, chunk: int = 25, return_trace: bool = False):
    """Activation images ``(B, I, J, H)`` of a stack of RGB images.

    Each image gets its own INR fitted from the shared keyed start; the
    output stacks hidden layer ``repr_layer`` over the full pixel grid.
    ``stats`` standardises the RGB input before fitting.  Results do not
    depend on ``workers`` or ``chunk``.
    """
    cfg = cfg or FitConfig(key=key)
    arch = arch or InrArch()
    if cfg.key != key:
        cfg = FitConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.alpha, key)
    if repr_layer >= arch.layers:
        raise ValueError(f"activation layer must be < {arch.layers}; "
                         "use linac_reconstruction for the colour output")
    x = check_images(images, 3)
    if stats is not None:
        x = apply_normalization(x, stats)
    out, trace = _run_fits(x, key, cfg, arch, repr_layer, workers, chunk)
    return (out, trace) if return_trace else out


def linac_reconstruction(images, key, cfg: FitConfig | None = None, arch: InrArch | None = None,
                         stats: NormalizationStats | None = None, workers: int | None = None,
                         chunk: int = 25, return_trace: bool = False):
    """Colour output of each fitted INR, mapped back to pixel scale when
    ``stats`` is given."""
    cfg = cfg or FitConfig(key=key)
    arch = arch or InrArch()
    if cfg.key != key:
        cfg = FitConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.alpha, key)
    x = check_images(images, 3)
    if stats is not None:
        x = apply_normalization(x, stats)
    out, trace = _run_fits(x, key, cfg, arch, arch.layers, workers, chunk)
    if stats is not None:
        out = invert_normalization(out, stats)
    return (out, trace) if return_trace else out


# -- block pixel shuffle ---------------------------------------------------

@dataclass(frozen=True)
class ShuffleKeySpec:
    key: int
    block: int = 4

    def __post_init__(self):
        if self.block < 1:
            raise ValueError("block size must be >= 1")

    def permutation(self) -> np.ndarray:
        return permutation(derive_stream(self.key, SHUFFLE), self.block * self.block)[0]


def _blocks(x, b):
    *lead, h, w, c = x.shape
    if h % b or w % b:
        raise ValueError(f"block size {b} does not divide image size {h}x{w}")
    v = x.reshape(*lead, h // b, b, w // b, b, c)
    v = np.moveaxis(v, -4, -3)  # (..., h/b, w/b, b, b, c)
    return v.reshape(*lead, h // b, w // b, b * b, c)


def _unblocks(v, b, h, w):
    *lead, _, _, _, c = v.shape
    v = v.reshape(*lead, h // b, w // b, b, b, c)
    v = np.moveaxis(v, -3, -4)
    return v.reshape(*lead, h, w, c)


def permute_blocks(x, perm, block):
    """Position ``q`` of every block receives the pixel from position ``perm[q]``."""
    x = np.asarray(x)
    h, w = x.shape[-3:-1]
    return _unblocks(_blocks(x, block)[..., perm, :], block, h, w)


def block_pixel_shuffle(x, spec: ShuffleKeySpec):
    return permute_blocks(x, spec.permutation(), spec.block)


def block_pixel_unshuffle(x, spec: ShuffleKeySpec):
    return permute_blocks(x, np.argsort(spec.permutation()), spec.block)


# -- CutMix ----------------------------------------------------------------

def mix_box(xa, ya, xb, yb, lam: float, cy: int, cx: int, num_classes: int = 10):
    """Paste the box of area ratio ``1 - lam`` centred at ``(cy, cx)`` from
    ``xb`` into ``xa``; label weights follow the area left after clipping."""
    xa, xb = np.asarray(xa), np.asarray(xb)
    if xa.shape != xb.shape:
        raise ValueError(f"cutmix inputs differ in shape: {xa.shape} vs {xb.shape}")
    if not 0 <= lam <= 1:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    h, w = xa.shape[:2]
    cut = np.sqrt(1.0 - lam)
    ch, cw = int(round(h * cut)), int(round(w * cut))
    top, bottom = np.clip([cy - ch // 2, cy - ch // 2 + ch], 0, h)
    left, right = np.clip([cx - cw // 2, cx - cw // 2 + cw], 0, w)
    out = xa.copy()
    out[top:bottom, left:right] = xb[top:bottom, left:right]
    frac = (bottom - top) * (right - left) / (h * w)
    label = np.zeros(num_classes)
    label[ya] += 1.0 - frac
    label[yb] += frac
    return out, label


def cutmix(xa, ya, xb, yb, s: RngStream, num_classes: int = 10):
    """Random CutMix of two images.

    Returns ``(mixed image, soft label, new stream)`` with ``lam ~ U(0, 1)``
    and a uniformly placed box centre.
    """
    h, w = np.shape(xa)[:2]
    u, s = uniforms(s, 3)
    out, label = mix_box(xa, ya, xb, yb, float(u[0]), int(u[1] * h), int(u[2] * w), num_classes)
    return out, label, s
