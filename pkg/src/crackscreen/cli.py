"""Operator command line: train, eval, cv, infer, arch-stats, bench,
gradcam, augment-preview, synth.

Every command emits machine-readable JSON next to any human-readable
output. Exit codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .arch import build_model, count_macs, count_params, preset_names
from .augment import (DegradationSpec, apply_plan, sample_rng, to_uint8, to_float,
                      _DRAW)
from .bench import bench_backends, bench_model
from .checkpoint import CheckpointFormatError, load_checkpoint
from .compare import crossval_compare, render_comparison
from .config import (ABLATIONS, ConfigError, load_run_config, resolve_run_config)
from .data import (DatasetLayoutError, FolderSource, MemorySource, SyntheticSpec,
                   generate_synthetic, load_split, save_split, scan_dataset,
                   stratified_kfold, stratified_split, write_synthetic_dataset)
from .gradcam import grad_cam_from_image, overlay
from .imgio import load_image, save_image
from .metrics import metrics_from_confusion
from .screening import screen_image
from .train import evaluate, model_rng, train


class DataError(RuntimeError):
    pass


def _require(value, message):
    if not value:
        raise ConfigError(message)
    return value


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))


def _load_run(args):
    flat = {
        "arch": getattr(args, "arch", None),
        "data.root": getattr(args, "data", None),
        "out_dir": getattr(args, "out", None),
        "train.seed": getattr(args, "seed", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.workers": getattr(args, "workers", None),
    }
    cfg = load_run_config(args.config, getattr(args, "ablation", None),
                          args.set or (), flat)
    return resolve_run_config(cfg)


def _scan(root):
    if root is None:
        raise ConfigError("data.root is not set (use --data or the config file)")
    try:
        return scan_dataset(root)
    except DatasetLayoutError as exc:
        raise DataError(str(exc)) from None


def cmd_train(args):
    run = _load_run(args)
    out_dir = Path(_require(run.out_dir, "out_dir is not set (use --out)"))
    index = _scan(run.data_root)
    split = stratified_split(index, run.fractions, run.split_seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    run.dump(out_dir / "resolved_config.json")
    save_split(split, out_dir / "split.json")
    model = build_model(run.arch, rng=model_rng(run.train.seed))
    result = train(model,
                   FolderSource(run.data_root, split.train),
                   FolderSource(run.data_root, split.val),
                   run.train, out_dir=out_dir)
    cm, _, _ = evaluate(model, FolderSource(run.data_root, split.test),
                        run.train.batch_size)
    test_metrics = metrics_from_confusion(cm).to_dict()
    summary = {"best_epoch": result.best_epoch, "best_val_f1": result.best_val_f1,
               "train_time_s": round(result.train_time_s, 2),
               "test": test_metrics, "checkpoint": result.best_checkpoint}
    _write_json(out_dir / "summary.json", summary)
    print(json.dumps(summary, indent=1, sort_keys=True))


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    index_root = _require(args.data, "--data is required")
    if args.split:
        split = load_split(args.split)
        paths = split.partitions()[args.partition]
    else:
        paths = _scan(index_root).paths()
    src = FolderSource(index_root, paths)
    if len(src) == 0:
        raise DataError(f"no images selected from {index_root}")
    degrade = DegradationSpec.default() if args.degraded else None
    cm, _, _ = evaluate(ckpt.model, src, args.batch, degrade=degrade,
                        seed=args.seed or 0)
    out = {"checkpoint": args.checkpoint, "partition": args.partition,
           "n": len(src), "degraded": bool(args.degraded),
           "confusion": {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn},
           "metrics": metrics_from_confusion(cm).to_dict()}
    if args.out:
        _write_json(args.out, out)
    print(json.dumps(out, indent=1, sort_keys=True))


def cmd_cv(args):
    run = _load_run(args)
    index = _scan(run.data_root)
    folds = stratified_kfold(index, args.k, run.split_seed)
    fold_sources = [(FolderSource(run.data_root, tr), FolderSource(run.data_root, va))
                    for tr, va in folds]
    arch_a = args.arch_a or "tiny"
    arch_b = args.arch_b or "tiny-cbam"
    _, report = crossval_compare(arch_a, arch_b, run.train, run.train,
                                 fold_sources, base_seed=run.train.seed)
    if run.out_dir:
        _write_json(Path(run.out_dir) / "cv_report.json", report)
    print(render_comparison(report))


def cmd_infer(args):
    ckpt = load_checkpoint(args.checkpoint)
    out_dir = Path(_require(args.out, "--out is required"))
    out_dir.mkdir(parents=True, exist_ok=True)
    all_candidates = []
    for image_path in args.images:
        try:
            image = load_image(image_path)
        except FileNotFoundError:
            raise DataError(f"image not found: {image_path}") from None
        image_id = Path(image_path).name
        cands = screen_image(
            ckpt.model, image, image_id, patch=args.patch, stride=args.stride,
            threshold=args.threshold, batch_size=args.batch,
            out_path=None,
            overlay_path=out_dir / f"{Path(image_path).stem}_candidates.png"
            if args.overlays else None,
            checkpoint_id=args.checkpoint)
        all_candidates.extend(cands)
    from .screening import emit_report
    emit_report(all_candidates,
                {"checkpoint": args.checkpoint, "patch": args.patch,
                 "stride": args.stride or args.patch, "threshold": args.threshold,
                 "timing_ms": None},
                out_dir / "report.jsonl")
    print(f"{len(all_candidates)} candidate regions -> {out_dir / 'report.jsonl'}")


def cmd_arch_stats(args):
    name = args.arch
    params = count_params(name)
    macs = count_macs(name, args.input_hw)
    out = {"arch": name, "params": params.to_dict(), "macs": macs.to_dict()}
    if args.out:
        _write_json(args.out, out)
    print(json.dumps(out, indent=1, sort_keys=True))
    p, m = params.total_params, macs.total_macs
    print(f"{name}: {p:,} params ({p / 1e6:.2f}M), "
          f"{m:,} MACs ({m / 1e9:.2f}G) at {macs.input_hw}x{macs.input_hw}")


def cmd_bench(args):
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).model
        name = args.checkpoint
    else:
        model = build_model(args.arch, rng=model_rng(0))
        name = args.arch
    if args.kernels:
        results = bench_backends(model, args.batch, args.iters, args.warmup)
        out = {"model": name, "results": {k: v.to_dict() for k, v in results.items()}}
        for k, v in sorted(results.items()):
            print(f"{k:>6}: median {v.median_ms:.2f} ms  p95 {v.p95_ms:.2f} ms  "
                  f"{v.throughput_ips:.1f} images/s")
    else:
        r = bench_model(model, args.batch, args.iters, args.warmup)
        out = {"model": name, **r.to_dict()}
        print(f"batch {r.batch}: median {r.median_ms:.2f} ms  p95 {r.p95_ms:.2f} ms  "
              f"{r.throughput_ips:.1f} images/s [{r.backend}]")
    if args.out:
        _write_json(args.out, out)


def cmd_gradcam(args):
    ckpt = load_checkpoint(args.checkpoint)
    out_dir = Path(_require(args.out, "--out is required"))
    out_dir.mkdir(parents=True, exist_ok=True)
    for image_path in args.images:
        try:
            image = load_image(image_path)
        except FileNotFoundError:
            raise DataError(f"image not found: {image_path}") from None
        hw = ckpt.model.config.input_hw
        from .augment import bilinear_resize
        resized = to_uint8(bilinear_resize(to_float(image), hw, hw))
        cam = grad_cam_from_image(ckpt.model, image, args.target_class)
        stem = Path(image_path).stem
        save_image(out_dir / f"{stem}_cam.png", overlay(cam, resized))
        _write_json(out_dir / f"{stem}_cam.json",
                    {"image": Path(image_path).name, "target_class": cam.target_class,
                     "all_zero": cam.all_zero,
                     "heatmap": [[round(float(v), 6) for v in row]
                                 for row in cam.upsampled]})
    print(f"wrote {len(args.images)} grad-cam overlays to {out_dir}")


def cmd_augment_preview(args):
    out_dir = Path(_require(args.out, "--out is required"))
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.image:
        img = load_image(args.image)
    else:
        spec = SyntheticSpec(size=args.size)
        img = generate_synthetic(spec, 1, seed=args.seed)[0][0]
    save_image(out_dir / "original.png", img)
    for entry in DegradationSpec.default().entries:
        rng = sample_rng(args.seed, hash(entry.kind) % (2 ** 31))
        values = _DRAW[entry.kind](entry.params, rng)
        degraded = apply_plan(img, [(entry.kind, values)])
        save_image(out_dir / f"{entry.kind}.png", to_uint8(degraded))
    print(f"wrote previews for {len(DegradationSpec.default().entries)} "
          f"degradations to {out_dir}")


def cmd_synth(args):
    spec = SyntheticSpec(size=args.size, crack_fraction=args.crack_fraction,
                         seed=args.seed)
    out = Path(_require(args.out, "--out is required"))
    index = write_synthetic_dataset(out, spec, args.n)
    crack, non = index.counts
    print(json.dumps({"root": str(out), "n": args.n,
                      "crack": crack, "non_crack": non}, indent=1))


def build_parser():
    p = argparse.ArgumentParser(prog="crackscreen",
                                description="crack patch screening toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON run config file")
        sp.add_argument("--set", action="append", metavar="PATH=VALUE",
                        help="dotted-path config override, e.g. train.lr_max=5e-4")
        sp.add_argument("--arch", choices=preset_names(), default=None)
        sp.add_argument("--seed", type=int, default=None)
        if data:
            sp.add_argument("--data", help="dataset root with CD/ and UD/")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("train", help="train a model per Algorithm config")
    common(sp)
    sp.add_argument("--ablation", choices=sorted(ABLATIONS))
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", help="split manifest JSON (from train)")
    sp.add_argument("--partition", default="test", choices=["train", "val", "test"])
    sp.add_argument("--degraded", action="store_true",
                    help="apply the degradation pipeline to the eval set")
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("cv", help="k-fold paired comparison of two archs")
    common(sp)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--arch-a", choices=preset_names())
    sp.add_argument("--arch-b", choices=preset_names())
    sp.add_argument("--epochs", type=int, default=None)
    sp.set_defaults(fn=cmd_cv)

    sp = sub.add_parser("infer", help="sliding-window screening of images")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--images", nargs="+", required=True)
    sp.add_argument("--patch", type=int, default=224)
    sp.add_argument("--stride", type=int, default=None)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--overlays", action="store_true")
    sp.add_argument("--out", required=False)
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("arch-stats", help="parameter and MAC accounting")
    sp.add_argument("arch", choices=preset_names())
    sp.add_argument("--input-hw", type=int, default=None)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_arch_stats)

    sp = sub.add_parser("bench", help="inference latency/throughput")
    sp.add_argument("--arch", choices=preset_names(), default="tiny")
    sp.add_argument("--checkpoint")
    sp.add_argument("--batch", type=int, default=1)
    sp.add_argument("--iters", type=int, default=50)
    sp.add_argument("--warmup", type=int, default=5)
    sp.add_argument("--kernels", action="store_true",
                    help="compare fast vs numpy kernel backends")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("gradcam", help="class activation map overlays")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--images", nargs="+", required=True)
    sp.add_argument("--target-class", type=int, default=1)
    sp.add_argument("--out", required=False)
    sp.set_defaults(fn=cmd_gradcam)

    sp = sub.add_parser("augment-preview", help="before/after degradation pairs")
    sp.add_argument("--image")
    sp.add_argument("--size", type=int, default=224)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=False)
    sp.set_defaults(fn=cmd_augment_preview)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--n", type=int, default=2000)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--crack-fraction", type=float, default=1.0 / 6.7)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=False)
    sp.set_defaults(fn=cmd_synth)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DatasetLayoutError, CheckpointFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
