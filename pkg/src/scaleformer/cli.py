"""Command-line surface: synth-data, train, infer, eval, bench, ablate, profile.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .complexity import flop_count
from .data import (
    SamplePair,
    SceneSpec,
    load_manifest,
    make_multiscale_testset,
    read_raster,
    write_manifest,
    write_raster,
)
from .metrics import MetricReport, aggregate, evaluate_pair, render_csv, render_table
from .model import ModelConfig, init_params
from .tensor import Tensor
from .tiling import infer_pair, tiled_inference
from .training import TrainConfig, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config files

def _build_dataclass(cls, fields, where):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(fields) - known
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    coerced = {
        k: tuple(v) if isinstance(v, list) else v for k, v in fields.items()
    }
    return cls(**coerced)


def load_config_file(path):
    """JSON with optional "model" and "train" sections; unknown keys rejected."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config root must be an object")
    unknown = set(raw) - {"model", "train"}
    if unknown:
        raise ValueError(f"{path}: unknown sections {sorted(unknown)}")
    model_cfg = _build_dataclass(ModelConfig, raw.get("model", {}), f"{path}:model")
    train_cfg = _build_dataclass(TrainConfig, raw.get("train", {}), f"{path}:train")
    return model_cfg, train_cfg


def _parse_scales(text):
    try:
        scales = [int(s) for s in text.split(",") if s]
    except ValueError:
        raise UsageError(f"bad scale list {text!r}") from None
    if not scales:
        raise UsageError("empty scale list")
    return scales


# ---------------------------------------------------------------------------
# subcommands

def _cmd_synth_data(args):
    spec = SceneSpec(kind=args.kind, rho=args.rho)
    train_pairs = make_multiscale_testset(
        args.seed, [args.train_scale], args.bands, args.ratio, args.train_count, spec
    )
    test_pairs = make_multiscale_testset(
        args.seed + 1, _parse_scales(args.scales), args.bands, args.ratio,
        args.count_per_scale, spec,
    )
    train_manifest = write_manifest(os.path.join(args.out, "train"), train_pairs)
    test_manifest = write_manifest(os.path.join(args.out, "test"), test_pairs)
    print(f"wrote {len(train_pairs)} training pairs -> {train_manifest}")
    print(f"wrote {len(test_pairs)} test pairs -> {test_manifest}")
    return 0


def _cmd_train(args):
    if args.config:
        model_cfg, train_cfg = load_config_file(args.config)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    if args.seed is not None:
        train_cfg.seed = args.seed
    dataset = load_manifest(args.manifest)
    model_cfg.ms_bands = dataset[0].lrms.shape[0]
    params = init_params(model_cfg, seed=train_cfg.seed)

    log_path = args.log or (os.path.splitext(args.out)[0] + ".log")
    with open(log_path, "w") as log_stream:
        params, logs = train(params, dataset, train_cfg, model_cfg, log_stream=log_stream)
    save_checkpoint(args.out, params, model_cfg)
    print(f"trained {train_cfg.epochs} epochs on {len(dataset)} pairs")
    print(f"final loss {logs[-1].mean_loss:.6f}; checkpoint -> {args.out}; log -> {log_path}")
    return 0


def _load_pair_from_args(args):
    return SamplePair(
        pan=read_raster(args.pan),
        lrms=read_raster(args.lrms),
        ratio=args.ratio,
        id=os.path.basename(args.pan),
    ).validate()


def _cmd_infer(args):
    params, cfg = load_checkpoint(args.checkpoint)
    pair = _load_pair_from_args(args)
    if args.tile:
        fused = tiled_inference(
            params, cfg, pair, tile=args.tile, overlap=args.overlap,
            blend=args.blend, window=args.window,
        )
    else:
        fused = infer_pair(params, cfg, pair, window=args.window)
    write_raster(args.out, Tensor(np.clip(fused.data, 0.0, 1.0)))
    print(f"fused {pair.id}: {tuple(fused.shape)} -> {args.out}")
    return 0


def _evaluate_manifest(params, cfg, pairs, window):
    report = MetricReport()
    for pair in pairs:
        fused = infer_pair(params, cfg, pair, window=window)
        report.add(pair.id, evaluate_pair(fused, pair))
    return report


def _cmd_eval(args):
    params, cfg = load_checkpoint(args.checkpoint)
    pairs = load_manifest(args.manifest)
    report = _evaluate_manifest(params, cfg, pairs, args.window)
    print(render_table(report, title=f"evaluation of {args.checkpoint}"))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(render_csv(report))
        print(f"csv -> {args.csv}")
    return 0


def _cmd_bench(args):
    params, cfg = load_checkpoint(args.checkpoint)
    pairs = load_manifest(args.manifest)
    by_scale = {}
    for pair in pairs:
        by_scale.setdefault(pair.scale, []).append(pair)
    all_reports = []
    for scale in sorted(by_scale):
        report = _evaluate_manifest(params, cfg, by_scale[scale], args.window)
        all_reports.append(report)
        print(render_table(report, title=f"scale {scale}"))
    combined = aggregate(all_reports)
    print(render_table(combined, title="all scales"))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(render_csv(combined))
        print(f"csv -> {args.csv}")
    return 0


ABLATION_GRID = (
    ("w/o RoPE", {"use_rope": False}),
    ("SeqT -> SpaT", {"use_seq_transformer": False}),
    ("w/o SAP", {"use_sap": False}),
    ("Baseline", {}),
)


def _cmd_ablate(args):
    if args.config:
        base_model, base_train = load_config_file(args.config)
    else:
        base_model, base_train = ModelConfig(), TrainConfig()
    if args.epochs is not None:
        base_train.epochs = args.epochs
    train_pairs = load_manifest(args.manifest)
    test_pairs = load_manifest(args.test_manifest)
    base_model.ms_bands = train_pairs[0].lrms.shape[0]
    scales = sorted({p.scale for p in test_pairs})

    rows = []
    for label, overrides in ABLATION_GRID:
        cfg = dataclasses.replace(base_model, **overrides)
        params = init_params(cfg, seed=base_train.seed)
        params, logs = train(params, train_pairs, base_train, cfg)
        cells = {}
        for scale in scales:
            subset = [p for p in test_pairs if p.scale == scale]
            report = _evaluate_manifest(params, cfg, subset, args.window)
            cells[scale] = (report.means["PSNR"], report.means["SSIM"])
        rows.append((label, logs[-1].mean_loss, cells))
        print(f"[{label}] final loss {logs[-1].mean_loss:.6f}")

    header = ["configuration"] + [f"{m}@{s}" for s in scales for m in ("PSNR", "SSIM")]
    table = [header]
    for label, _, cells in rows:
        table.append(
            [label] + [f"{cells[s][i]:.4f}" for s in scales for i in (0, 1)]
        )
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    print()
    for i, row in enumerate(table):
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
        if i == 0:
            print("  ".join("-" * w for w in widths))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(",".join(header) + "\n")
            for label, _, cells in rows:
                fh.write(
                    ",".join([label] + [f"{cells[s][i]:.4f}" for s in scales for i in (0, 1)])
                    + "\n"
                )
        print(f"csv -> {args.csv}")
    return 0


def _cmd_profile(args):
    cfg = ModelConfig()
    if args.config:
        cfg, _ = load_config_file(args.config)
    scales = _parse_scales(args.scales)
    totals = []
    for s in scales:
        rep = flop_count(cfg, s, s, args.ratio, args.window)
        totals.append(rep.total)
        print(f"-- scale {s} --")
        for line in rep.to_lines():
            print(line)
    print("totals:", " ".join(f"{s}:{t:,d}" for s, t in zip(scales, totals)))
    return 0


# ---------------------------------------------------------------------------
# wiring

def build_parser():
    parser = _Parser(prog="scaleformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset + manifests")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bands", type=int, default=4)
    p.add_argument("--ratio", type=float, default=2.0)
    p.add_argument("--train-count", type=int, default=16)
    p.add_argument("--train-scale", type=int, default=64)
    p.add_argument("--scales", default="32,64")
    p.add_argument("--count-per-scale", type=int, default=2)
    p.add_argument("--kind", default="gaussian-field", choices=SceneSpec.GENERATORS)
    p.add_argument("--rho", type=float, default=0.8)
    p.set_defaults(fn=_cmd_synth_data)

    p = sub.add_parser("train", help="train on a manifest, write a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="fuse one PAN/LRMS pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pan", required=True)
    p.add_argument("--lrms", required=True)
    p.add_argument("--ratio", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--tile", type=int)
    p.add_argument("--overlap", type=int, default=0)
    p.add_argument("--blend", default="hard", choices=("hard", "feather"))
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("eval", help="metric report over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--csv")
    p.add_argument("--window", type=int, default=16)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("bench", help="multi-scale benchmark over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--csv")
    p.add_argument("--window", type=int, default=16)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("ablate", help="train and score the ablation grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--csv")
    p.add_argument("--window", type=int, default=16)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("profile", help="analytic compute/memory across scales")
    p.add_argument("--scales", default="32,64,128,256")
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--ratio", type=float, default=2.0)
    p.add_argument("--config")
    p.set_defaults(fn=_cmd_profile)
    return parser


def run_cli(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli(sys.argv[1:]))
