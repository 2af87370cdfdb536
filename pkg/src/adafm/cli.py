"""
cli.py
-----------------
Command-line entry point.

    python -m src.adafm.cli train     --config configs/synthetic_mlp.yaml --seed 7
    python -m src.adafm.cli eval      --out runs/x --split test --baseline runs/base/report
    python -m src.adafm.cli analyze   --out runs/x --plot
    python -m src.adafm.cli gradcheck --all-models
    python -m src.adafm.cli gen-synth --out data/synthetic --format parquet
    python -m src.adafm.cli compare   --config configs/synthetic_mlp.yaml

Every command writes under --out with fixed file names and exits 0 only on
full success.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from utils.explainability import weight_heatmap
from utils.metrics import GROUP_RULES, rela_impr
from utils.modeling import MODEL_KINDS
from utils.training import load_checkpoint, save_checkpoint

from .config import RunConfig, load_config, resolve_config
from .pipeline import compare_ablations, evaluate_split, prepare_data, run_gradcheck, train_model
from .synthetic_generate import generate_synthetic, save_synthetic

logger = logging.getLogger("adafm")

CHECKPOINT = "checkpoint"
TRAIN_LOG = "train_log"
REPORT = "report"
RESOLVED_CONFIG = "resolved_config"
HEATMAP_USER = "heatmap_user.csv"
HEATMAP_ITEM = "heatmap_item.csv"


# ---------------------------------------------------------------------
# COMMANDS
# ---------------------------------------------------------------------
def cmd_train(config: RunConfig, args) -> int:
    out = Path(config.out)
    config.dump(out / RESOLVED_CONFIG)
    data = prepare_data(config)
    bundle, result = train_model(config, data, log_path=out / TRAIN_LOG, progress=not args.quiet)
    save_checkpoint(bundle, out / CHECKPOINT, extra_meta={"run": config.to_dict()})
    result.history.to_csv(out / "history.csv", index=False)
    if args.plot:
        from utils.plots import plot_training_curve

        plot_training_curve(result.history, out / "training_curve.png")
    print(f"best epoch {result.best_epoch} | val AUC {_fmt(result.best_val_auc)}")
    return 0


def cmd_eval(config: RunConfig, args) -> int:
    out = Path(config.out)
    bundle, meta = load_checkpoint(args.checkpoint or out / CHECKPOINT)
    config = _checkpoint_config(config, meta, args)
    config.dump(out / RESOLVED_CONFIG)
    data = prepare_data(config)
    report = evaluate_split(bundle, data.split(args.split), data.stats, config)
    print(f"AUC  {_fmt(report.auc)}")
    print(f"UAUC {_fmt(report.uauc)}")
    if not report.buckets.empty:
        print(report.buckets.to_string(index=False))
    payload = {"split": args.split, **report.to_dict()}
    if args.baseline:
        base_path = Path(args.baseline)
        if not base_path.exists():
            raise FileNotFoundError(f"❌ Baseline report not found: {base_path}")
        base = json.loads(base_path.read_text())
        payload["relaimpr"] = {}
        for metric in ("auc", "uauc"):
            value = rela_impr(payload[metric], base.get(metric))
            payload["relaimpr"][metric] = value
            print(f"RelaImpr {metric.upper():<4} {'undefined' if value is None else f'{value:+.2f}%'}")
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT).write_text(json.dumps(payload, indent=2))
    logger.info("💾 Saved report → %s", out / REPORT)
    return 0


def cmd_analyze(config: RunConfig, args) -> int:
    out = Path(config.out)
    bundle, meta = load_checkpoint(args.checkpoint or out / CHECKPOINT)
    config = _checkpoint_config(config, meta, args)
    config.dump(out / RESOLVED_CONFIG)
    if not bundle.adapters:
        print("❌ This checkpoint was trained without a state-aware adapter; nothing to analyse.")
        return 1
    data = prepare_data(config)
    dataset = data.split(args.split)
    batch = dataset.encode()
    if len(batch) > config.metrics.max_heatmap_samples:
        idx = np.sort(np.random.default_rng(config.seed).choice(len(batch), config.metrics.max_heatmap_samples, replace=False))
        batch = batch.take(idx)

    heatmaps = {
        HEATMAP_USER: weight_heatmap(bundle, batch, data.stats, GROUP_RULES[config.metrics.user_rule], "user"),
        HEATMAP_ITEM: weight_heatmap(bundle, batch, data.stats, GROUP_RULES[config.metrics.heatmap_item_rule], "item"),
    }
    for name, heatmap in heatmaps.items():
        heatmap.to_csv(out / name)
        print(f"\n{heatmap.rule} ({heatmap.side} adapter)")
        print(heatmap.to_frame().round(3).to_string())
        if args.plot:
            from utils.plots import plot_weight_heatmap

            plot_weight_heatmap(heatmap, out / name.replace(".csv", ".png"))

    report = evaluate_split(bundle, dataset, data.stats, config)
    report.buckets.to_csv(out / "bucket_report.csv", index=False)
    print()
    print(report.buckets.to_string(index=False))
    return 0


def cmd_gradcheck(config: RunConfig, args) -> int:
    out = Path(config.out)
    config.dump(out / RESOLVED_CONFIG)
    kinds = MODEL_KINDS if args.all_models else [config.model.kind]
    table = run_gradcheck(config, kinds, corrupt_gradient=args.corrupt_gradient)
    print(table[["model", "ablation", "max_rel_error", "worst", "passed"]].to_string(index=False))
    table.to_csv(out / "gradcheck.csv", index=False)
    failed = int((~table["passed"]).sum())
    if failed:
        print(f"❌ {failed} of {len(table)} configurations exceed relative error {config.gradcheck.tol:g}")
        return 1
    print(f"✅ all {len(table)} configurations pass (tol {config.gradcheck.tol:g})")
    return 0


def cmd_gen_synth(config: RunConfig, args) -> int:
    out = Path(config.out)
    config.dump(out / RESOLVED_CONFIG)
    data = generate_synthetic(config.synthetic, config.dataset.dim, config.stats.temporal)
    for path in save_synthetic(data, out, args.format):
        print(path)
    data.train.schema.to_yaml(out / "schema.yaml")
    return 0


def cmd_compare(config: RunConfig, args) -> int:
    if args.sweep_lr:
        config = config.replace(**{"compare.sweep_lr": True})
    out = Path(config.out)
    config.dump(out / RESOLVED_CONFIG)
    seeds = args.seeds if args.seeds else config.compare.seeds
    runs, summary = compare_ablations(config, seeds)
    runs.to_csv(out / "compare_runs.csv", index=False)
    summary.to_csv(out / "compare_summary.csv")
    print(summary.round(4).to_string())
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
    "gen-synth": cmd_gen_synth,
    "compare": cmd_compare,
}


# ---------------------------------------------------------------------
# HELPERS
# ---------------------------------------------------------------------
def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def _checkpoint_config(config: RunConfig, meta: dict, args) -> RunConfig:
    """Without --config, start from the run config stored in the checkpoint; --set and --seed still apply."""
    if args.config is None and "run" in meta:
        return resolve_config(meta["run"], args.overrides, args.seed, config.out)
    return config


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML run config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="dotted override, repeatable")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="adafm", description="Adaptive feature modelling with feature masks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common])
    p.add_argument("--plot", action="store_true", help="also render the training curve")
    p.add_argument("--quiet", action="store_true", help="no progress bars")

    for name in ("eval", "analyze"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--split", default="test", choices=["train", "val", "test"])
        if name == "eval":
            p.add_argument("--baseline", default=None, help="report file of the baseline run")
        else:
            p.add_argument("--plot", action="store_true", help="render heatmap PNGs")

    p = sub.add_parser("gradcheck", parents=[common])
    p.add_argument("--all-models", action="store_true")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("gen-synth", parents=[common])
    p.add_argument("--format", default="csv", choices=["csv", "parquet"])

    p = sub.add_parser("compare", parents=[common])
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    p.add_argument("--sweep-lr", action="store_true", help="tune trainer.lr over trainer.lr_grid per run")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        config = load_config(args.config, args.overrides, args.seed, args.out)
    except (ValueError, FileNotFoundError) as e:
        print(str(e), file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](config, args)
    except (ValueError, KeyError, FileNotFoundError, RuntimeError, FloatingPointError) as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
