"""Robust-accuracy aggregation, report tables and fitting diagnostics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lnt1

BEST_ADVERSARY = "best_adversary"
BEST_KNOWN = "best_known"


@dataclass
class CorrectnessMasks:
    """Per-example correctness: ``robust[attack][source]`` is a bool vector
    aligned with ``clean``."""

    clean: np.ndarray
    robust: dict = field(default_factory=dict)

    def __post_init__(self):
        self.clean = np.asarray(self.clean, bool)
        for attack, cols in self.robust.items():
            for source, m in cols.items():
                m = np.asarray(m, bool)
                if m.shape != self.clean.shape:
                    raise ValueError(f"mask {attack}/{source} has {m.shape}, "
                                     f"expected {self.clean.shape}")
                cols[source] = m

    def add(self, attack, source, mask):
        mask = np.asarray(mask, bool)
        if mask.shape != self.clean.shape:
            raise ValueError(f"mask {attack}/{source} has {mask.shape}, expected {self.clean.shape}")
        self.robust.setdefault(attack, {})[source] = mask

    @property
    def attacks(self):
        return list(self.robust)

    @property
    def sources(self):
        seen = {}
        for cols in self.robust.values():
            for s in cols:
                seen.setdefault(s, None)
        return list(seen)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lnt1.save(directory / "clean.lnt1", self.clean.astype(np.uint8))
        index = []
        for a, cols in self.robust.items():
            for s, m in cols.items():
                name = f"mask{len(index)}.lnt1"
                lnt1.save(directory / name, m.astype(np.uint8))
                index.append({"attack": a, "source": s, "file": name})
        (directory / "masks.json").write_text(json.dumps(index, indent=2) + "\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        out = cls(lnt1.load(directory / "clean.lnt1").astype(bool))
        for item in json.loads((directory / "masks.json").read_text()):
            out.add(item["attack"], item["source"], lnt1.load(directory / item["file"]))
        return out


def best_known(clean, columns) -> float:
    """Fraction of examples correct when clean and under every attack column."""
    clean = np.asarray(clean, bool)
    if clean.size == 0:
        raise ValueError("no examples to aggregate")
    columns = list(columns)
    if not columns:
        raise ValueError("need at least one attack column")
    ok = clean.copy()
    for c in columns:
        ok &= np.asarray(c, bool)
    return float(ok.mean())


def best_adversary(clean, per_source) -> float:
    """Robust accuracy of one attack against the strongest of its sources."""
    per_source = list(per_source)
    if not per_source:
        raise ValueError("need at least one source")
    return best_known(clean, per_source)


@dataclass
class RobustReport:
    clean_accuracy: float
    sources: list
    attacks: list
    table: dict           # attack or best_known -> {source or best_adversary: fraction}
    metadata: dict

    def value(self, row, col):
        return self.table[row][col]

    def rows(self):
        cols = self.sources + [BEST_ADVERSARY]
        yield ["attack"] + cols
        for name in self.attacks + [BEST_KNOWN]:
            yield [name] + [f"{100 * self.table[name][c]:.2f}" for c in cols]


def build_report(masks: CorrectnessMasks, metadata=None) -> RobustReport:
    attacks, sources = masks.attacks, masks.sources
    if not attacks:
        raise ValueError("no attack masks to report")
    table = {}
    for a in attacks:
        cols = masks.robust[a]
        row = {s: (best_known(masks.clean, [cols[s]]) if s in cols else float("nan"))
               for s in sources}
        row[BEST_ADVERSARY] = best_adversary(masks.clean, cols.values())
        table[a] = row
    bk = {}
    for s in sources:
        col = [masks.robust[a][s] for a in attacks if s in masks.robust[a]]
        bk[s] = best_known(masks.clean, col)
    bk[BEST_ADVERSARY] = best_known(
        masks.clean, [m for a in attacks for m in masks.robust[a].values()])
    table[BEST_KNOWN] = bk
    return RobustReport(float(masks.clean.mean()), sources, attacks, table, dict(metadata or {}))


def emit_report(masks: CorrectnessMasks, metadata, path) -> RobustReport:
    """Write the report CSV and a JSON sidecar next to it."""
    report = build_report(masks, metadata)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(report.rows())
    side = dict(report.metadata)
    side["clean_accuracy"] = round(100 * report.clean_accuracy, 2)
    side["examples"] = int(masks.clean.size)
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return report


def read_report(path):
    """Parse a report CSV into ``{row: {column: percent}}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0][1:]
    return {r[0]: {c: float(v) for c, v in zip(header, r[1:])} for r in rows[1:]}


def characterisation_dump(traces, errors, directory, bins: int = 20, key_gaps=None):
    """Write the raw data behind fitting diagnostics.

    ``traces`` is ``(images, steps)`` of per-step mini-batch errors and
    ``errors`` the final full-grid error per image.  Produces
    ``curves.csv`` (one row per image and step), ``curves.lnt1``,
    ``errors.csv``, ``histogram.csv``, optional ``key_gaps.csv`` and a
    ``summary.json``.
    """
    traces = np.asarray(traces, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if traces.ndim != 2 or len(traces) != len(errors):
        raise ValueError("need a (images, steps) trace array and one error per image")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lnt1.save(directory / "curves.lnt1", traces)
    with open(directory / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "step", "error"])
        for i, row in enumerate(traces):
            w.writerows([i, t, f"{v:.8g}"] for t, v in enumerate(row))
    with open(directory / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "error"])
        w.writerows([i, f"{e:.10g}"] for i, e in enumerate(errors))
    counts, edges = np.histogram(errors, bins=bins)
    with open(directory / "histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lo", "hi", "count"])
        w.writerows([f"{lo:.8g}", f"{hi:.8g}", int(c)] for lo, hi, c in zip(edges, edges[1:], counts))
    summary = {"images": int(len(errors)), "steps": int(traces.shape[1]),
               "mean_error": float(errors.mean()), "std_error": float(errors.std()),
               "curve_mean": traces.mean(axis=0).tolist(),
               "curve_std": traces.std(axis=0).tolist()}
    if key_gaps is not None:
        gaps = np.asarray(key_gaps, dtype=np.float64)
        with open(directory / "key_gaps.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pair", "max_abs_gap"])
            w.writerows([i, f"{g:.8g}"] for i, g in enumerate(gaps))
        summary["key_gap_min"] = float(gaps.min())
        summary["key_gap_mean"] = float(gaps.mean())
    (directory / "summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    return summary
