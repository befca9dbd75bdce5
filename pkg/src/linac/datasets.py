"""Image sources: CIFAR-10 binary batches, a keyed synthetic shape set, and
small natural-image patches cut from photos bundled with scikit-image and
scikit-learn.  All images are float32 NHWC in [0, 1].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .rng import derive_stream, gaussians, integers, uniforms

CIFAR_RECORD = 1 + 32 * 32 * 3
CIFAR_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST = ["test_batch.bin"]
SHAPES = ("disk", "square", "triangle", "plus", "ring",
          "hbar", "vbar", "cross", "dots", "corner")


def read_cifar_batch(path, limit=None):
    """Decode one binary batch: a label byte then 3072 channel-planar pixels."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise ValueError(f"{path}: size is not a multiple of {CIFAR_RECORD}-byte records")
    records = raw.reshape(-1, CIFAR_RECORD)
    if limit is not None:
        records = records[:limit]
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images.astype(np.float32) / 255.0, labels


def load_cifar10(directory, split="train", limit=None):
    directory = Path(directory)
    names = CIFAR_TRAIN if split == "train" else CIFAR_TEST
    xs, ys = [], []
    for name in names:
        x, y = read_cifar_batch(directory / name)
        xs.append(x), ys.append(y)
        if limit is not None and sum(len(v) for v in ys) >= limit:
            break
    x, y = np.concatenate(xs), np.concatenate(ys)
    return (x, y) if limit is None else (x[:limit], y[:limit])


def _shape_mask(kind, yy, xx, cy, cx, r):
    dy, dx = (yy - cy) / r, (xx - cx) / r
    ady, adx = np.abs(dy), np.abs(dx)
    # signed distance-like field in units of r; negative inside
    if kind == "disk":
        d = np.hypot(dy, dx) - 1.0
    elif kind == "square":
        d = np.maximum(ady, adx) - 0.85
    elif kind == "triangle":
        d = np.maximum(dy - 0.8, adx - (dy + 0.9) * 0.6)
    elif kind == "plus":
        d = np.minimum(np.maximum(ady - 1.0, adx - 0.3), np.maximum(adx - 1.0, ady - 0.3))
    elif kind == "ring":
        d = np.abs(np.hypot(dy, dx) - 0.75) - 0.25
    elif kind == "hbar":
        d = np.maximum(adx - 1.1, ady - 0.3)
    elif kind == "vbar":
        d = np.maximum(ady - 1.1, adx - 0.3)
    elif kind == "cross":
        u, v = (dy + dx) / np.sqrt(2), (dy - dx) / np.sqrt(2)
        d = np.minimum(np.maximum(np.abs(u) - 1.1, np.abs(v) - 0.25),
                       np.maximum(np.abs(v) - 1.1, np.abs(u) - 0.25))
    elif kind == "dots":
        d = np.minimum(np.hypot(dy - 0.55, dx - 0.55), np.hypot(dy + 0.55, dx + 0.55)) - 0.4
    elif kind == "corner":
        d = np.minimum(np.maximum(np.abs(dy - 0.6) - 0.3, adx - 0.9),
                       np.maximum(np.abs(dx + 0.6) - 0.3, ady - 0.9))
    else:
        raise ValueError(kind)
    return d


def make_synthetic(n, size=16, key=0, label="synthetic"):
    """Keyed 10-class shape images over Gaussian-blob clutter.

    The class is the shape; position, scale, foreground colour, background
    blobs and pixel noise are all random, so colour carries no label
    information.
    """
    s = derive_stream(key, label)
    labels, s = integers(s, n, len(SHAPES))
    u, s = uniforms(s, n * 16)
    u = u.reshape(n, 16)
    noise, s = gaussians(s, n * size * size * 3)
    noise = noise.reshape(n, size, size, 3)
    yy, xx = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    images = np.empty((n, size, size, 3))
    for i in range(n):
        ui = u[i]
        bg = 0.2 + 0.6 * ui[0:3]
        img = np.broadcast_to(bg, (size, size, 3)).copy()
        for j in range(2):
            by, bx = ui[3 + 2 * j] * size, ui[4 + 2 * j] * size
            amp = (ui[7 + j] - 0.5) * 0.6
            blob = np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * (0.25 * size) ** 2))
            img += amp * blob[..., None] * np.array([1.0, 0.8, 0.6])[[j, (j + 1) % 3, (j + 2) % 3]]
        fg = ui[9:12]
        # keep the shape visible against the background
        fg = np.where(np.abs(fg - bg) < 0.25, (fg + 0.5) % 1.0, fg)
        cy = size / 2 + (ui[12] - 0.5) * size * 0.25
        cx = size / 2 + (ui[13] - 0.5) * size * 0.25
        r = size * (0.22 + 0.1 * ui[14])
        d = _shape_mask(SHAPES[labels[i]], yy, xx, cy, cx, r)
        alpha = 1.0 / (1.0 + np.exp(np.clip(d * r * 2.5, -30, 30)))
        img = img * (1 - alpha[..., None]) + fg * alpha[..., None]
        images[i] = img + 0.03 * noise[i]
    return np.clip(images, 0.0, 1.0).astype(np.float32), labels


def _photos():
    from skimage import data
    from sklearn.datasets import load_sample_images

    photos = [data.astronaut(), data.chelsea(), data.coffee(), data.rocket()]
    photos += list(load_sample_images().images)
    return [np.asarray(p, dtype=np.float64) / 255.0 for p in photos]


def natural_patches(n, size=32, key=0, label="natural-patches"):
    """``n`` photo crops, each ``size * f`` pixels square for a random
    ``f`` in 2..6, average-pooled down to ``size x size``."""
    photos = _photos()
    s = derive_stream(key, label)
    u, s = uniforms(s, 4 * n)
    out = np.empty((n, size, size, 3), dtype=np.float32)
    for i in range(n):
        photo = photos[int(u[4 * i] * len(photos))]
        h, w, _ = photo.shape
        f = 2 + int(u[4 * i + 1] * 5)
        f = min(f, h // size, w // size)
        crop = size * f
        top = int(u[4 * i + 2] * (h - crop + 1))
        left = int(u[4 * i + 3] * (w - crop + 1))
        patch = photo[top:top + crop, left:left + crop]
        out[i] = patch.reshape(size, f, size, f, 3).mean(axis=(1, 3))
    return out
