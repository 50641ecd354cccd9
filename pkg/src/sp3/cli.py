"""``sp3`` command line: data generation, superpixels, label propagation,
training, ablations, evaluation and plotting.

Exit codes: 0 success, 1 operation error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import ManifestError, load_dataset, read_manifest
from .grid import GridError, ScribbleSet
from .metrics import MetricReport, evaluate
from .plot import PlotError, plot_curves
from .propagation import ThresholdState, expand_scribbles, refine_pseudo_label
from .slic import SlicParameterError, SuperpixelMap, slic_segment
from .synth import SynthSpec, generate, write_manifest
from .tensorio import TensorFormatError, tensor_read, tensor_write
from .trainer import TrainConfig, ablation_run, format_ablation, save_run, train

log = logging.getLogger("sp3")

OPERATION_ERRORS = (OSError, GridError, TensorFormatError, SlicParameterError, PlotError, ValueError, KeyError, FloatingPointError)


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def cmd_gen_data(a) -> None:
    spec = SynthSpec(size=a.size, family=a.family, noise=a.noise, samples=a.n, seed=a.seed)
    manifest = generate(spec, a.out)
    print(f"wrote {len(manifest['samples'])} samples to {a.out}")


def _slic_one(image, a):
    sp = slic_segment(image, a.n, a.compactness, a.iters, a.seed)
    return sp, {"n": sp.n, "sizes": sp.sizes.tolist()}


def cmd_slic(a) -> None:
    if (a.image is None) == (a.manifest is None):
        raise GridError("give exactly one of --image or --manifest")
    if a.image is not None:
        if a.out is None:
            raise GridError("--out is required with --image")
        sp, meta = _slic_one(tensor_read(a.image, expect_dtype=np.float64), a)
        tensor_write(a.out, sp.sp_id)
        _write_json(f"{a.out}.json", meta)
        print(f"{sp.n} superpixels -> {a.out}")
        return
    path = Path(a.manifest)
    root = path.parent
    manifest = read_manifest(path)
    (root / "superpixels").mkdir(exist_ok=True)
    for rec in manifest["samples"]:
        try:
            image = tensor_read(root / rec["image"], expect_dtype=np.float64)
        except (OSError, TensorFormatError) as exc:
            raise ManifestError(f"sample {rec['id']}: cannot read image: {exc}") from exc
        sp, meta = _slic_one(image, a)
        rel = f"superpixels/{rec['id']}.spt"
        tensor_write(root / rel, sp.sp_id)
        _write_json(root / f"{rel}.json", meta)
        rec["superpixel"] = rel
    manifest["superpixel_params"] = {"n": a.n, "compactness": a.compactness, "iters": a.iters}
    write_manifest(path, manifest)
    print(f"superpixels written for {len(manifest['samples'])} samples")


def cmd_expand(a) -> None:
    sp = SuperpixelMap.from_ids(tensor_read(a.sp))
    scribbles = ScribbleSet.from_json(json.loads(Path(a.scribbles).read_text()))
    out = expand_scribbles(sp, scribbles, a.classes, on_conflict="keep" if a.keep_conflicts else "raise")
    tensor_write(a.out, out)


def cmd_refine(a) -> None:
    sp = SuperpixelMap.from_ids(tensor_read(a.sp))
    pseudo = tensor_read(a.pseudo)
    state = ThresholdState.from_json(json.loads(Path(a.thresholds).read_text()))
    tensor_write(a.out, refine_pseudo_label(sp, pseudo, state))


def _train_config(a) -> TrainConfig:
    base = json.loads(Path(a.config).read_text()) if a.config else {}
    cfg = TrainConfig.from_dict(base)
    overrides = {
        "labeled_ratio": a.labeled_ratio, "iters": a.iters, "batch": a.batch, "mu": a.mu, "lr": a.lr,
        "tau0": a.tau0, "momentum": a.lam, "seed": a.seed, "n_superpixels": a.n_superpixels,
    }
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def cmd_train(a) -> None:
    cfg = _train_config(a)
    dataset = load_dataset(a.manifest, need_superpixels=cfg.n_superpixels is None)
    result = train(dataset, cfg)
    out = save_run(result, cfg, dataset, a.out)
    last = result.rows[-1] if result.rows else {}
    print(f"trained {cfg.iters} iterations; final val Dice {last.get('val_dice', float('nan')):.4f} -> {out}")


def cmd_ablate(a) -> None:
    grid = json.loads(Path(a.grid).read_text())
    if isinstance(grid, list):
        grid = {"variants": grid}
    variants = grid["variants"]
    for v in variants:
        if "name" not in v:
            raise GridError("every ablation variant needs a 'name'")
    base = grid.get("base", {})
    dataset = load_dataset(a.manifest, need_superpixels=base.get("n_superpixels") is None)
    rows = ablation_run(dataset, variants, tuple(grid.get("seeds", [0])), base)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    Path(a.out).write_text(format_ablation(rows))
    print(f"{len(rows)} ablation rows -> {a.out}")


def _report_json(rep: MetricReport) -> dict:
    return rep.to_json()


def cmd_eval(a) -> None:
    if a.pred_dir is not None:
        if a.manifest is None:
            raise GridError("--pred-dir needs --manifest")
        dataset = load_dataset(a.manifest, need_superpixels=False)
        per = {}
        for s in dataset.split(a.split):
            pred = tensor_read(Path(a.pred_dir) / f"{s.id}.spt", expect_dtype=np.uint8)
            per[s.id] = evaluate(pred, s.truth, dataset.classes)
        if not per:
            raise GridError(f"no samples in split {a.split!r}")

        def avg(key):
            vals = [getattr(r, key) for r in per.values()]
            vals = [v for v in vals if np.isfinite(v)]
            return float(np.mean(vals)) if vals else None

        out = {
            "split": a.split,
            "n": len(per),
            "mean": {k: avg(f"mean_{k}") for k in ("dice", "ji", "hd95", "asd")},
            "samples": {sid: _report_json(r) for sid, r in per.items()},
        }
    else:
        if a.pred is None or a.truth is None or a.classes is None:
            raise GridError("give --pred, --truth and --classes, or --pred-dir with --manifest")
        out = _report_json(evaluate(tensor_read(a.pred), tensor_read(a.truth), a.classes))
    _write_json(a.out, out)
    print(f"metrics -> {a.out}")


def cmd_plot(a) -> None:
    written = plot_curves(Path(a.log), a.out)
    print("wrote " + ", ".join(str(p) for p in written))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sp3", description="Superpixel-propagated scribble segmentation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--family", choices=["rings", "blob"], default="rings")
    g.add_argument("--n", type=int, default=80, help="number of samples")
    g.add_argument("--size", type=int, default=96)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("slic", help="superpixels for one image or a whole manifest")
    s.add_argument("--image")
    s.add_argument("--manifest")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--compactness", type=float, default=0.1)
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_slic)

    e = sub.add_parser("expand", help="expand scribbles over superpixels")
    e.add_argument("--sp", required=True)
    e.add_argument("--scribbles", required=True)
    e.add_argument("--classes", type=int)
    e.add_argument("--keep-conflicts", action="store_true", help="leave multi-class superpixels unexpanded")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_expand)

    r = sub.add_parser("refine", help="refine a pseudo-label with superpixel thresholds")
    r.add_argument("--sp", required=True)
    r.add_argument("--pseudo", required=True)
    r.add_argument("--thresholds", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_refine)

    t = sub.add_parser("train", help="train the two-head model")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config", help="JSON file of training options")
    t.add_argument("--labeled-ratio", type=float)
    t.add_argument("--iters", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--mu", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--tau0", type=float)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--n-superpixels", type=int, help="recompute superpixels in memory")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    ab = sub.add_parser("ablate", help="run a grid of training variants")
    ab.add_argument("--manifest", required=True)
    ab.add_argument("--grid", required=True)
    ab.add_argument("--out", required=True)
    ab.set_defaults(func=cmd_ablate)

    ev = sub.add_parser("eval", help="segmentation metrics")
    ev.add_argument("--pred")
    ev.add_argument("--truth")
    ev.add_argument("--classes", type=int)
    ev.add_argument("--pred-dir")
    ev.add_argument("--manifest")
    ev.add_argument("--split", default="test")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="SVG curves from a training log")
    pl.add_argument("--log", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except OPERATION_ERRORS as exc:
        print(f"sp3 {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
