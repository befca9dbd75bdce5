"""Keyed, splittable pseudo-random streams.

Every random decision in the package (INR initialisation, per-epoch pixel
shuffles, block permutations, attack restarts, classifier batching) is drawn
from a stream derived from a 64-bit key and a purpose label.  Streams are
immutable values: each draw returns the value together with the advanced
stream, so nothing depends on global state or scheduling.

The core generator is SplitMix64.  Because its state advances by a fixed
odd increment, the k-th output is a pure function of ``state + k * GAMMA``,
which lets bulk draws be vectorised while staying bit-identical to the
scalar path.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# The private key used for the published defended classifier.
REFERENCE_KEY = -2314326399425823309

INIT = "init"
SHUFFLE = "shuffle"
ATTACK = "attack"
TRAINING = "training"


def shuffle_epoch(epoch: int) -> str:
    """Label of the pixel-shuffle stream used in fitting epoch ``epoch``."""
    return f"shuffle-epoch({int(epoch)})"


def mix64(z: int) -> int:
    """SplitMix64 finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def label_hash(label: str) -> int:
    """64-bit FNV-1a of the UTF-8 label."""
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def key_to_u64(key: int) -> int:
    """Map a signed (or unsigned) 64-bit key to its unsigned bit pattern."""
    key = int(key)
    if not -(1 << 63) <= key <= MASK64:
        raise ValueError(f"key {key} does not fit in 64 bits")
    return key & MASK64


@dataclass(frozen=True)
class RngStream:
    state: int
    label: str = ""

    def __post_init__(self):
        if not 0 <= self.state <= MASK64:
            raise ValueError("stream state must be an unsigned 64-bit integer")


def derive_stream(key: int, label: str) -> RngStream:
    """Stream for ``(key, label)``; identical inputs give identical streams."""
    seed = (mix64(key_to_u64(key)) + label_hash(label)) & MASK64
    return RngStream(mix64(seed ^ GAMMA), label)


def uint64s(s: RngStream, n: int) -> tuple[np.ndarray, RngStream]:
    """``n`` raw 64-bit outputs and the advanced stream."""
    n = int(n)
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return np.zeros(0, dtype=np.uint64), s
    with np.errstate(over="ignore"):
        steps = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(s.state) + steps * np.uint64(GAMMA)
        out = _mix64_array(states)
    return out, RngStream((s.state + n * GAMMA) & MASK64, s.label)


def next_uint64(s: RngStream) -> tuple[int, RngStream]:
    state = (s.state + GAMMA) & MASK64
    return mix64(state), RngStream(state, s.label)


def uniforms(s: RngStream, n: int) -> tuple[np.ndarray, RngStream]:
    """``n`` doubles in [0, 1) built from the top 53 bits of each output."""
    raw, s = uint64s(s, n)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53, s


def next_uniform(s: RngStream) -> tuple[float, RngStream]:
    z, s = next_uint64(s)
    return (z >> 11) * 2.0**-53, s


def gaussians(s: RngStream, n: int) -> tuple[np.ndarray, RngStream]:
    """``n`` standard normals, Box-Muller over consecutive uniform pairs.

    Each normal consumes two uniforms; the sine branch is discarded so that
    the consumption count is exactly ``2 * n``.
    """
    u, s = uniforms(s, 2 * int(n))
    u1, u2 = u[0::2], u[1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    return r * np.cos(2.0 * np.pi * u2), s


def next_gaussian(s: RngStream) -> tuple[float, RngStream]:
    z, s = gaussians(s, 1)
    return float(z[0]), s


def permutation(s: RngStream, n: int) -> tuple[np.ndarray, RngStream]:
    """Fisher-Yates shuffle of ``0..n-1`` driven by ``s``."""
    n = int(n)
    if n < 0:
        raise ValueError("n must be non-negative")
    perm = np.arange(n, dtype=np.int64)
    if n <= 1:
        return perm, s
    u, s = uniforms(s, n - 1)
    bounds = np.arange(n, 1, -1, dtype=np.float64)
    picks = np.floor(u * bounds).astype(np.int64)
    out = perm.tolist()
    for i, j in zip(range(n - 1, 0, -1), picks.tolist()):
        out[i], out[j] = out[j], out[i]
    return np.asarray(out, dtype=np.int64), s


def integers(s: RngStream, n: int, high: int) -> tuple[np.ndarray, RngStream]:
    """``n`` integers uniform on ``0..high-1``."""
    if high < 1:
        raise ValueError("high must be >= 1")
    u, s = uniforms(s, n)
    return np.minimum(np.floor(u * high).astype(np.int64), high - 1), s


def stream_digest(key: int, label: str, n: int = 1000) -> str:
    """SHA-256 of the first ``n`` little-endian outputs of a stream."""
    raw, _ = uint64s(derive_stream(key, label), n)
    return hashlib.sha256(raw.astype("<u8").tobytes()).hexdigest()


def random_keys(s: RngStream, n: int) -> tuple[list[int], RngStream]:
    """``n`` signed 64-bit keys (as an attacker would guess them)."""
    raw, s = uint64s(s, n)
    return [int(v) - (1 << 64) if v >= 1 << 63 else int(v) for v in raw.tolist()], s
