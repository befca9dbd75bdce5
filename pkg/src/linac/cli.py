"""``linac`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import lnt1
from .config import PRESETS, ConfigError, deep_merge, load_config, validate
from .datasets import read_cifar_batch
from .evaluation import CorrectnessMasks, characterisation_dump, emit_report
from .experiment import (Dataset, Defence, SWEEP_PARAMS, brute_force, load_checkpoint,
                         load_dataset, run_attacks, sweep, train_experiment)
from .inr import FitConfig, InrArch, fit_inr_batch, reconstruction_error
from .rng import REFERENCE_KEY

log = logging.getLogger("linac")


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_image(path, index):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"--image: {path} does not exist")
    if path.suffix == ".bin":
        x, _ = read_cifar_batch(path, limit=index + 1)
    else:
        x = lnt1.load(path)
        if x.dtype == np.uint8:
            x = x.astype(np.float32) / 255.0
        if x.ndim == 3:
            x = x[None]
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ConfigError(f"--image: expected (I, J, 3) or (B, I, J, 3) pixels, got {x.shape}")
    if not 0 <= index < len(x):
        raise ConfigError(f"--index: {index} is out of range for {len(x)} images")
    return x[index:index + 1].astype(np.float32)


def cmd_fit(args):
    if args.repr_layer >= args.layers and not args.reconstruction:
        args.parser.error(f"--repr-layer {args.repr_layer} needs --reconstruction "
                          f"(hidden layers are 0..{args.layers - 1})")
    image = _read_image(args.image, args.index)
    cfg = FitConfig(args.epochs, args.batch, args.lr, args.alpha, args.key)
    arch = InrArch(args.layers, args.width, args.freqs, args.grid)
    res = fit_inr_batch(image, cfg, arch)
    h, w = image.shape[1:3]
    recon = res.params.reconstruct(h, w)
    out = Path(args.out)
    res.params.save(out / "inr")
    if args.reconstruction:
        lnt1.save(out / "reconstruction.lnt1", recon[0])
    else:
        lnt1.save(out / "activations.lnt1", res.params.hidden(args.repr_layer, h, w)[0])
    with open(out / "trace.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step", "error"])
        wr.writerows([t, f"{v:.8g}"] for t, v in enumerate(res.trace[0]))
    error = float(reconstruction_error(recon, image)[0])
    _write_json(out / "fit.json", {"image": str(args.image), "index": args.index,
                                   "key": args.key, "steps": res.steps,
                                   "fit": {"epochs": cfg.epochs, "batch_size": cfg.batch_size,
                                           "learning_rate": cfg.learning_rate,
                                           "alpha": cfg.alpha},
                                   "arch": {"layers": arch.layers, "width": arch.width,
                                            "freqs": arch.freqs, "grid": arch.grid},
                                   "repr_layer": arch.layers if args.reconstruction
                                   else args.repr_layer,
                                   "reconstruction_error": error})
    print(f"fitted {res.steps} steps, reconstruction error {error:.6f}")


def _config(args, required=True):
    if args.config is None:
        if required:
            raise ConfigError("--config is required")
        return validate({"preset": "desk-small"})
    return load_config(args.config)


def cmd_transform(args):
    data = Dataset.load(args.dataset)
    doc = _config(args, required=False)
    t = deep_merge(doc.get("transform", {"kind": "linac"}), {"key": args.key})
    if args.kind:
        t["kind"] = args.kind
    t = validate({"transform": t})["transform"]
    defence = Defence.from_config(t, data.x_train, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        x = getattr(data, f"x_{split}")
        lnt1.save(out / f"x_{split}.lnt1", np.ascontiguousarray(defence(x), np.float32))
        lnt1.save(out / f"y_{split}.lnt1", getattr(data, f"y_{split}").astype(np.int64))
        log.info("transformed %d %s images", len(x), split)
    _write_json(out / "defence.json", defence.to_dict())
    print(f"wrote {out}")


def _out(args, doc):
    return Path(args.out or doc.get("out", "runs/linac"))


def cmd_train(args):
    doc = _config(args)
    out = _out(args, doc)
    exp = train_experiment(doc, workers=args.workers, log=lambda r: log.info("%s", r))
    exp.save(out)
    print(f"clean accuracy {100 * exp.metrics['clean_accuracy']:.2f}% -> {out}")


def cmd_attack(args):
    doc = _config(args)
    exp = load_checkpoint(args.checkpoint, workers=args.workers)
    exp.doc = deep_merge(exp.doc, {k: doc[k] for k in ("attacks", "bypass", "eval_size")
                                   if k in doc})
    out = Path(args.out or Path(args.checkpoint) / "attack")
    masks, outcomes, meta = run_attacks(exp, log=lambda r: log.info("%s", r))
    masks.save(out / "masks")
    x, _ = exp.eval_set()
    for (name, via), o in outcomes.items():
        o.save(out / "outcomes" / f"{name}-{via}", x_clean=x)
    report = emit_report(masks, meta, out / "report.csv")
    for row in report.rows():
        print(",".join(row))


def cmd_bruteforce(args):
    exp = load_checkpoint(args.checkpoint, workers=args.workers)
    ranking = brute_force(exp, args.keys, args.batch, args.seed)
    out = Path(args.out or Path(args.checkpoint) / "bruteforce")
    out.mkdir(parents=True, exist_ok=True)
    true_key = exp.defence.key
    with open(out / "ranking.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["rank", "key", "accuracy", "true_key"])
        for r, (k, acc) in enumerate(ranking):
            wr.writerow([r + 1, k, f"{acc:.4f}", int(k == true_key)])
    rank = next(r for r, (k, _) in enumerate(ranking) if k == true_key) + 1
    wrong = [acc for k, acc in ranking if k != true_key]
    summary = {"keys": len(ranking), "true_key_rank": rank,
               "true_key_accuracy": dict(ranking)[true_key],
               "wrong_key_mean_accuracy": float(np.mean(wrong)) if wrong else None,
               "batch": args.batch}
    _write_json(out / "summary.json", summary)
    print(f"true key rank {rank}/{len(ranking)}")


def cmd_report(args):
    merged = None
    for d in args.masks:
        m = CorrectnessMasks.load(d)
        if merged is None:
            merged = m
            continue
        if m.clean.shape != merged.clean.shape or not np.array_equal(m.clean, merged.clean):
            raise ConfigError(f"--masks: {d} was computed on different examples")
        for a, cols in m.robust.items():
            for s, mask in cols.items():
                merged.add(a, s, mask)
    emit_report(merged, {"masks": [str(d) for d in args.masks]}, args.out)
    print(f"wrote {args.out}")


def cmd_sweep(args):
    doc = _config(args)
    out = _out(args, doc)
    rows = sweep(doc, args.param, args.values, args.workers, log=lambda r: log.info("%s", r))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"sweep_{args.param}.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([args.param, "clean_accuracy", "robust_accuracy"])
        for r in rows:
            wr.writerow([r["value"], f"{100 * r['clean_accuracy']:.2f}",
                         f"{100 * r['robust_accuracy']:.2f}"])
            print(f"{args.param}={r['value']}: clean {100 * r['clean_accuracy']:.2f}% "
                  f"robust {100 * r['robust_accuracy']:.2f}%")


def cmd_dataset(args):
    ds = {"format": args.format}
    for name in ("path", "size", "train_size", "test_size", "key"):
        v = getattr(args, name)
        if v is not None:
            ds[name] = v
    ds = validate({"dataset": ds})["dataset"]
    data = load_dataset(ds)
    data.save(args.out)
    _write_json(Path(args.out) / "dataset.json", ds)
    print(f"wrote {len(data.y_train)} train / {len(data.y_test)} test images to {args.out}")


def cmd_characterise(args):
    data = Dataset.load(args.dataset)
    x = data.x_test[:args.count]
    cfg = FitConfig(args.epochs, args.batch, key=args.key)
    arch = InrArch(args.layers, args.width, args.freqs)
    res = fit_inr_batch(x, cfg, arch)
    errors = reconstruction_error(res.params.reconstruct(*x.shape[1:3]), x)
    other = fit_inr_batch(x, FitConfig(args.epochs, args.batch, key=args.key + 1), arch)
    h, w = x.shape[1:3]
    gaps = np.abs(res.params.hidden(2 % arch.layers, h, w)
                  - other.params.hidden(2 % arch.layers, h, w)).reshape(len(x), -1).max(axis=1)
    summary = characterisation_dump(res.trace, errors, args.out, key_gaps=gaps)
    print(f"mean reconstruction error {summary['mean_error']:.6f} over {len(x)} images")


def cmd_presets(args):
    if args.name:
        if args.name not in PRESETS:
            raise ConfigError(f"unknown preset {args.name!r}; choose from {sorted(PRESETS)}")
        print(json.dumps(PRESETS[args.name], indent=2, sort_keys=True))
    else:
        for name in sorted(PRESETS):
            print(name)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linac", description="Keyed implicit-network input "
                                "transforms and the attacks used to evaluate them.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(fn=fn, parser=sp)
        return sp

    def workers(sp):
        sp.add_argument("--workers", type=int, default=None,
                        help="worker processes for INR fitting (default: $LINAC_WORKERS or 1)")

    sp = add("fit", cmd_fit, "fit one image and write its INR, activations and loss trace")
    sp.add_argument("--image", required=True, help="LNT1 image(s) or CIFAR-10 .bin batch")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--key", type=int, default=REFERENCE_KEY)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--layers", type=int, default=5)
    sp.add_argument("--width", type=int, default=256)
    sp.add_argument("--freqs", type=int, default=5)
    sp.add_argument("--repr-layer", type=int, default=2)
    sp.add_argument("--reconstruction", action="store_true",
                    help="emit the colour reconstruction instead of hidden activations")
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--alpha", type=float, default=1e-4)
    sp.add_argument("--grid", choices=("centers", "endpoints"), default="centers")
    sp.add_argument("--out", required=True)

    sp = add("transform", cmd_transform, "apply a keyed defence to an LNT1 dataset")
    sp.add_argument("--dataset", required=True, help="directory written by `linac dataset`")
    sp.add_argument("--key", type=int, required=True)
    sp.add_argument("--kind", choices=("linac", "linac-reconstruction", "block-shuffle"))
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    workers(sp)

    sp = add("train", cmd_train, "train a (defended) classifier from a config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    workers(sp)

    sp = add("attack", cmd_attack, "run the configured attacks against a checkpoint")
    sp.add_argument("--config", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out")
    workers(sp)

    sp = add("bruteforce", cmd_bruteforce, "rank the true key among random guesses")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--keys", type=int, required=True)
    sp.add_argument("--batch", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    workers(sp)

    sp = add("report", cmd_report, "merge stored correctness masks into a report CSV")
    sp.add_argument("--masks", nargs="+", required=True)
    sp.add_argument("--out", required=True)

    sp = add("sweep", cmd_sweep, "retrain and attack per value of F, L, K or N")
    sp.add_argument("--config", required=True)
    sp.add_argument("--param", choices=sorted(SWEEP_PARAMS), required=True)
    sp.add_argument("--values", type=int, nargs="+", required=True)
    sp.add_argument("--out")
    workers(sp)

    sp = add("dataset", cmd_dataset, "write a dataset as LNT1 tensors")
    sp.add_argument("--format", choices=("synthetic", "cifar10"), required=True)
    sp.add_argument("--path", help="CIFAR-10 binary batch directory")
    sp.add_argument("--size", type=int)
    sp.add_argument("--train-size", type=int)
    sp.add_argument("--test-size", type=int)
    sp.add_argument("--key", type=int)
    sp.add_argument("--out", required=True)

    sp = add("characterise", cmd_characterise, "dump fitting curves and error statistics")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--key", type=int, default=REFERENCE_KEY)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--layers", type=int, default=5)
    sp.add_argument("--width", type=int, default=256)
    sp.add_argument("--freqs", type=int, default=5)
    sp.add_argument("--out", required=True)

    sp = add("presets", cmd_presets, "list presets or print one")
    sp.add_argument("name", nargs="?")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"linac {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
