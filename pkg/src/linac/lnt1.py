"""LNT1 tensor files.

Layout: magic ``LNT1``, u8 dtype code, u8 rank, little-endian u32 extents,
then the raw little-endian values in row-major order.  Codes 0 and 1 are
f32 and f64; 2 (u8) and 3 (i64) carry labels and masks.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LNT1"
CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1"), 3: np.dtype("<i8")}
_BY_KIND = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2, ("b", 1): 2, ("i", 8): 3}


class LNT1Error(ValueError):
    pass


def dumps(array) -> bytes:
    a = np.asarray(array)
    code = _BY_KIND.get((a.dtype.kind, a.dtype.itemsize))
    if code is None:
        raise LNT1Error(f"unsupported dtype {a.dtype}")
    if a.ndim > 255:
        raise LNT1Error("rank must fit in one byte")
    header = MAGIC + struct.pack("<BB", code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype=CODES[code]).tobytes()


def loads(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise LNT1Error("bad magic")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in CODES:
        raise LNT1Error(f"unknown dtype code {code}")
    dims = struct.unpack_from(f"<{rank}I", buf, 6)
    offset = 6 + 4 * rank
    dtype = CODES[code]
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - offset != count * dtype.itemsize:
        raise LNT1Error("payload length does not match extents")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims).copy()


def save(path, array) -> None:
    data = dumps(array)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())


def save_params(directory, params, descriptor: dict) -> None:
    """Write a parameter list as ``layer{i}.{name}.lnt1`` plus ``spec.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, group in enumerate(params):
        entry = {}
        for name in sorted(group):
            fname = f"layer{i}.{name}.lnt1"
            save(directory / fname, group[name])
            entry[name] = fname
        files.append(entry)
    doc = dict(descriptor, tensors=files)
    (directory / "spec.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_params(directory):
    directory = Path(directory)
    doc = json.loads((directory / "spec.json").read_text())
    params = [{name: load(directory / fname) for name, fname in entry.items()}
              for entry in doc["tensors"]]
    return params, doc
