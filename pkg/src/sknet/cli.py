"""Command-line entry point: train, eval, export-skeypoints, ablate, gen-synth.

Exit codes are a stable scripting contract: 0 success, 2 usage/config/IO
problems, 3 numerical divergence during training. Every command writes its
fully-resolved configuration into the output directory before any compute.
Evaluation prints one JSON object per line with keys
{metric, value, perturbation, seed}; all CSVs are comma-separated with a
header row, UTF-8, and LF line endings.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .ablation import ABLATION_MODES, run_ablation, write_ablation_csv
from .data import (ParseError, load_dataset, load_manifest, load_point_file,
                   normalize_unit_cube, save_manifest, synthetic_manifest,
                   write_ply, SYNTHETIC_SHAPES)
from .model import ConfigError, SKNet, load_checkpoint, save_checkpoint
from .runconfig import RunConfig, load_run_config, write_resolved_config
from .training import TrainingDiverged, evaluate, train

INPUT_COLOR = (128, 128, 128)
SKEYPOINT_COLOR = (255, 0, 0)
NORMALIZED_COLOR = (255, 165, 0)


def _load_splits(cfg: RunConfig) -> tuple:
    if not cfg.train_manifest or not cfg.test_manifest:
        raise ConfigError("config must set data.train_manifest and data.test_manifest")
    train_set = load_dataset(load_manifest(cfg.train_manifest, split="train"),
                             base_dir=os.path.dirname(cfg.train_manifest))
    test_set = load_dataset(load_manifest(cfg.test_manifest, split="test"),
                            base_dir=os.path.dirname(cfg.test_manifest))
    return train_set, test_set


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, tuple(args.set or ()))
    if args.out:
        cfg.out_dir = args.out
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_resolved_config(cfg, os.path.join(cfg.out_dir, "config.toml"))
    train_set, test_set = _load_splits(cfg)
    model = SKNet(cfg.model, seed=cfg.seed)

    def log(row):
        print(f"epoch {row.epoch:3d}  loss {row.loss_total:.4f}  "
              f"train_acc {row.train_accuracy:.3f}  test {row.test_metric:.3f}  "
              f"({row.wall_time_s:.1f}s)", flush=True)

    report = train(model, train_set, test_set, cfg.train, log=log)
    save_checkpoint(model, os.path.join(cfg.out_dir, "checkpoint.npz"))
    report.to_csv(os.path.join(cfg.out_dir, "report.csv"))
    best = report.best_row()
    print(f"best epoch {best.epoch}: {report.metric_name} {best.test_metric:.4f}")
    return 0


def _parse_sweep(text) -> list:
    return [float(v) for v in text.split(",")] if text else []


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(load_manifest(args.manifest),
                           base_dir=os.path.dirname(args.manifest))
    runs = []
    if args.sweep_dropout:
        runs = [("dropout", r) for r in _parse_sweep(args.sweep_dropout)]
    elif args.sweep_skeypoint_noise:
        runs = [("skeypoint_noise", s) for s in _parse_sweep(args.sweep_skeypoint_noise)]
    elif args.dropout is not None:
        runs = [("dropout", args.dropout)]
    elif args.skeypoint_noise is not None:
        runs = [("skeypoint_noise", args.skeypoint_noise)]
    else:
        runs = [("none", 0.0)]
    rows = []
    for kind, amount in runs:
        metrics = evaluate(
            model, dataset, batch_size=args.batch_size,
            dropout_ratio=amount if kind == "dropout" else 0.0,
            skeypoint_noise_sigma=amount if kind == "skeypoint_noise" else 0.0,
            seed=args.seed)
        perturbation = "none" if kind == "none" else f"{kind}={amount:g}"
        print(json.dumps({"metric": metrics["metric"], "value": metrics["value"],
                          "perturbation": perturbation, "seed": args.seed}))
        rows.append((kind, amount, metrics))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("perturbation,amount,n_points,metric,value,seed\n")
            for kind, amount, metrics in rows:
                fh.write(f"{kind},{amount!r},{metrics['n_points']},"
                         f"{metrics['metric']},{metrics['value']!r},{args.seed}\n")
    return 0


def cmd_export_skeypoints(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cloud = normalize_unit_cube(load_point_file(args.cloud))
    out = model.forward(cloud.coords[None, :, :], training=False)
    sk = out.skeypoints[0]
    coords = np.concatenate([cloud.coords, sk.skeypoints, sk.normalized], axis=0)
    colors = np.array([INPUT_COLOR] * cloud.n_points
                      + [SKEYPOINT_COLOR] * len(sk.skeypoints)
                      + [NORMALIZED_COLOR] * len(sk.normalized))
    write_ply(args.out, coords, colors=colors)
    print(f"wrote {coords.shape[0]} vertices to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, tuple(args.set or ()))
    if args.out:
        cfg.out_dir = args.out
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_resolved_config(cfg, os.path.join(cfg.out_dir, "config.toml"))
    train_set, test_set = _load_splits(cfg)
    seeds = [int(s) for s in args.seeds.split(",")]

    def log(result):
        print(f"{result.mode} / {result.variant} / seed {result.seed}: "
              f"{result.test_metric:.4f}", flush=True)

    results = run_ablation(args.mode, cfg.model, cfg.loss, cfg.train,
                           train_set, test_set, seeds=seeds, log=log)
    out_csv = os.path.join(cfg.out_dir, f"ablation_{args.mode}.csv")
    write_ablation_csv(results, out_csv)
    print(f"wrote {out_csv}")
    return 0


def cmd_gen_synth(args) -> int:
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    os.makedirs(args.out, exist_ok=True)
    train_m = synthetic_manifest(classes, args.train_per_class, args.n_points,
                                 args.noise, seed_start=args.seed, split="train")
    test_m = synthetic_manifest(classes, args.test_per_class, args.n_points,
                                args.noise,
                                seed_start=args.seed + len(train_m.entries),
                                split="test")
    if args.write_files:
        from .data import resolve_entry
        for manifest, sub in ((train_m, "train"), (test_m, "test")):
            os.makedirs(os.path.join(args.out, sub), exist_ok=True)
            entries = []
            for i, (token, label) in enumerate(manifest.entries):
                pc = resolve_entry(token)
                rel = os.path.join(sub, f"{manifest.class_names[label]}_{i:04d}.ply")
                write_ply(os.path.join(args.out, rel), pc.coords, normals=pc.normals)
                entries.append((rel, label))
            manifest.entries = entries
    train_path = os.path.join(args.out, "train.tsv")
    test_path = os.path.join(args.out, "test.tsv")
    save_manifest(train_m, train_path)
    save_manifest(test_m, test_path)
    print(f"wrote {train_path} ({len(train_m.entries)} entries) and "
          f"{test_path} ({len(test_m.entries)} entries)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sknet",
        description="Train and probe the learned spatial-keypoint network.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a TOML run config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--out", help="override the configured output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally under perturbation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--dropout", type=float, help="input point dropout ratio")
    p.add_argument("--skeypoint-noise", type=float, dest="skeypoint_noise",
                   help="gaussian noise sigma on inferred keypoints")
    p.add_argument("--sweep-dropout", help="comma list of dropout ratios")
    p.add_argument("--sweep-skeypoint-noise", dest="sweep_skeypoint_noise",
                   help="comma list of noise sigmas")
    p.add_argument("--csv", help="write sweep rows to this CSV path")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-skeypoints",
                       help="write input, keypoints, normalized keypoints as colored PLY")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cloud", required=True, help="point file (ply/off/xyz-csv)")
    p.add_argument("--out", required=True, help="output PLY path")
    p.set_defaults(func=cmd_export_skeypoints)

    p = sub.add_parser("ablate", help="run a matched-seed ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", required=True, choices=ABLATION_MODES)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--out", help="override the configured output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-synth", help="write synthetic dataset manifests")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", default=",".join(SYNTHETIC_SHAPES))
    p.add_argument("--train-per-class", type=int, default=100)
    p.add_argument("--test-per-class", type=int, default=25)
    p.add_argument("--n-points", type=int, default=512)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--write-files", action="store_true",
                   help="materialize PLY files instead of recipe tokens")
    p.set_defaults(func=cmd_gen_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ParseError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
