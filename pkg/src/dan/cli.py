"""Command-line entry point: ``dan <subcommand> ...``.

Exit codes: 0 success, 1 a check failed, 2 bad input (config, data,
checkpoint) or a training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from .accounting import count_params_flops
from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig
from .data import DatasetError, load_dataset, save_dataset, synth_dataset
from .fcn import ConfigError
from .tensor import ShapeError
from .train import TrainingError, ablate_heads, evaluate, load_data, train

PRESETS = {"default": RunConfig, "toy": RunConfig.toy, "full": RunConfig.full}
USER_ERRORS = (ConfigError, DatasetError, CheckpointError, TrainingError, ShapeError, ValueError, OSError)


def build_config(args) -> RunConfig:
    cfg = PRESETS[args.preset]()
    if args.config:
        cfg = RunConfig.load(args.config, base=cfg)
    if args.set:
        cfg = cfg.override(args.set)
    return cfg


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--preset", choices=sorted(PRESETS), default="toy", help="base values before --config (default: toy)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-root", help="image folder; default is the held-out split of the checkpoint's synthetic data")
    p.add_argument("--manifest", default="manifest.csv", help="CSV of path,label relative to --data-root")


def _dataset_for(checkpoint: Checkpoint, args):
    cfg = checkpoint.config
    if args.data_root:
        root = Path(args.data_root)
        return load_dataset(root, root / args.manifest, cfg.data.image_size, num_classes=cfg.model.num_classes)
    if cfg.data.kind != "synthetic":
        raise DatasetError("checkpoint was trained on folder data; pass --data-root")
    train_set, held_out = load_data(cfg)
    return held_out if held_out is not None else train_set


# ----------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = build_config(args)
    result = train(cfg, args.out)
    summary = {"train_accuracy": result.train_report.accuracy, "checkpoint": str(result.checkpoint_path)}
    if result.eval_report is not None:
        summary["eval_accuracy"] = result.eval_report.accuracy
    print(json.dumps(summary, indent=2))
    return 0


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    report = evaluate(ckpt, _dataset_for(ckpt, args))
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(f"accuracy {report.accuracy:.4f} on {report.num_samples} samples")
    if not args.out:
        print(text)
    return 0


def cmd_ablate_heads(args) -> int:
    cfg = build_config(args)
    heads = [int(k) for k in args.heads.split(",")]
    rows = ablate_heads(cfg, heads, args.out)
    print("num_heads  params  train_acc  eval_acc  overlap")
    for r in rows:
        ev = "-" if r["eval_accuracy"] is None else f"{r['eval_accuracy']:.4f}"
        ov = "-" if r["mean_head_overlap"] is None else f"{r['mean_head_overlap']:.4f}"
        print(f"{r['num_heads']:>9}  {r['params']:>6}  {r['train_accuracy']:.4f}     {ev}    {ov}")
    return 0


def cmd_export_attn(args) -> int:
    from .attention_maps import export_attention_maps

    ckpt = Checkpoint.load(args.checkpoint)
    ds = _dataset_for(ckpt, args)
    images = ds.images[: args.count]
    out = export_attention_maps(ckpt, images, args.out)
    print(f"wrote {len(out['maps'])} maps and {out['overlap_csv']}")
    return 0


def cmd_count_params(args) -> int:
    cfg = build_config(args)
    size = args.image_size or cfg.data.image_size
    print(json.dumps(count_params_flops(cfg.model, size).as_dict(), indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.seed, args.tolerance)
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:<50} {r.error:.3e}")
    failed = sum(not r.ok for r in results)
    print(f"{len(results) - failed}/{len(results)} passed (tolerance {args.tolerance:g})")
    return 1 if failed else 0


def cmd_synth_data(args) -> int:
    ds = synth_dataset(args.classes, args.per_class, args.size, seed=args.seed, noise=args.noise)
    manifest = save_dataset(ds, args.out)
    print(f"wrote {len(ds)} images, manifest {manifest}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dan", description="Facial expression recognition with attention heads.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write metrics, report and checkpoint")
    _config_args(p)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    _data_args(p)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-heads", help="train once per head count and tabulate")
    _config_args(p)
    p.add_argument("--heads", default="1,2,4,8", help="comma-separated head counts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate_heads)

    p = sub.add_parser("export-attn", help="write per-head spatial gate images")
    p.add_argument("checkpoint")
    _data_args(p)
    p.add_argument("--count", type=int, default=8, help="number of images to export")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attn)

    p = sub.add_parser("count-params", help="parameter and multiply-accumulate counts")
    _config_args(p)
    p.add_argument("--image-size", type=int, help="input size (default: the config's)")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth-data", help="write a synthetic face dataset as PNGs plus manifest")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

