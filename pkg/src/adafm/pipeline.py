"""
pipeline.py
-----------------
Glue between RunConfig and the modelling utilities: data preparation,
bundle construction, training, evaluation, ablation comparison and the
gradient-check harness. Every CLI command is a thin wrapper around one
of these functions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from utils.adapter import AdapterConfig
from utils.embedding import FeatureSchema
from utils.feature_mask import MaskConfig
from utils.metrics import GROUP_RULES, MetricReport, auc, evaluate_scores
from utils.modeling import MODEL_KINDS, ModelConfig
from utils.scenarios import calculate_impact, summarize_runs
from utils.training import (
    ABLATIONS,
    FitResult,
    ModelBundle,
    check_gradients,
    fit,
    predict_in_chunks,
    uses_adapter,
)

from .config import RunConfig
from .dataset import Dataset, split_random
from .movielens_download import download_movielens, load_movielens, movielens_schema
from .stats_build import StatsStore, build_stats
from .synthetic_generate import GroundTruth, SynthConfig, generate_synthetic

logger = logging.getLogger(__name__)


@dataclass
class PreparedData:
    train: Dataset
    val: Dataset
    test: Dataset
    stats: StatsStore
    truth: Optional[GroundTruth] = None

    @property
    def schema(self) -> FeatureSchema:
        return self.train.schema

    def split(self, name: str) -> Dataset:
        if name not in ("train", "val", "test"):
            raise ValueError(f"❌ Unknown split '{name}' (train, val or test)")
        return getattr(self, name)


# ---------------------------------------------------------------------
# DATA
# ---------------------------------------------------------------------
def prepare_data(config: RunConfig) -> PreparedData:
    ds = config.dataset
    if ds.name == "synthetic":
        data = generate_synthetic(config.synthetic, ds.dim, config.stats.temporal)
        return PreparedData(data.train, data.val, data.test, data.stats, data.truth)

    path = download_movielens(ds.path) if ds.download else Path(ds.path)
    schema = movielens_schema(ds.schema, ds.use_titles, ds.dim)
    full = load_movielens(path, schema)
    train, val, test = split_random(full, ds.split, config.seed)
    return PreparedData(train, val, test, build_stats(train, config.stats.temporal))


# ---------------------------------------------------------------------
# MODEL
# ---------------------------------------------------------------------
def build_bundle(config: RunConfig, schema: FeatureSchema, stats: StatsStore) -> ModelBundle:
    return ModelBundle(
        schema,
        config.model,
        config.adapter,
        use_adapter=uses_adapter(config.adapter, config.trainer),
        user_count_columns=stats.user_count_columns,
        item_count_columns=stats.item_count_columns,
    )


def train_model(
    config: RunConfig,
    data: PreparedData,
    log_path: str | Path | None = None,
    progress: bool = True,
) -> tuple[ModelBundle, FitResult]:
    bundle = build_bundle(config, data.schema, data.stats).initialize(config.seed)
    result = fit(
        bundle,
        data.train.encode(),
        data.val.encode(),
        data.stats,
        config.mask,
        config.trainer,
        config.seed,
        log_path=log_path,
        progress=progress,
    )
    return bundle, result


def sweep_learning_rates(config: RunConfig, data: PreparedData) -> tuple[float, pd.DataFrame]:
    """Train once per trainer.lr_grid entry; keep the lr with the best validation AUC."""
    rows = []
    for lr in config.trainer.lr_grid:
        trial = config.replace(**{"trainer.lr": lr})
        _, result = train_model(trial, data, progress=False)
        rows.append({"lr": lr, "val_auc": result.best_val_auc, "best_epoch": result.best_epoch})
        logger.info("🔎 lr=%g → val AUC %s", lr, result.best_val_auc)
    table = pd.DataFrame(rows)
    scored = table.dropna(subset=["val_auc"])
    if scored.empty:
        raise RuntimeError("❌ No learning rate produced a defined validation AUC")
    best = float(scored.loc[scored["val_auc"].astype(float).idxmax(), "lr"])
    logger.info("✅ Selected lr=%g", best)
    return best, table


# ---------------------------------------------------------------------
# EVALUATION
# ---------------------------------------------------------------------
def check_schema(bundle: ModelBundle, dataset: Dataset) -> None:
    if bundle.schema != dataset.schema:
        raise ValueError(
            f"❌ Checkpoint schema {bundle.schema.names} (d={bundle.schema.dim}) does not match "
            f"dataset schema {dataset.schema.names} (d={dataset.schema.dim})"
        )


def evaluate_split(bundle: ModelBundle, dataset: Dataset, stats: StatsStore, config: RunConfig) -> MetricReport:
    """Serve-path scores → AUC, UAUC, user/item state buckets and the cold/warm segment."""
    check_schema(bundle, dataset)
    batch = dataset.encode()
    scores = predict_in_chunks(bundle, batch, stats, config.trainer.eval_batch_size)
    user_rule = GROUP_RULES[config.metrics.user_rule]
    item_rule = GROUP_RULES[config.metrics.item_rule]
    report = evaluate_scores(
        scores,
        batch.labels,
        batch.user_keys,
        [
            (user_rule, stats.user_stat(batch.user_keys, user_rule.stat.removeprefix("user_"))),
            (item_rule, stats.item_stat(batch.item_keys, item_rule.stat.removeprefix("item_"))),
        ],
    )
    if "cold" in batch.extras:
        cold = batch.extras["cold"].astype(bool)
        segment = pd.DataFrame(
            [
                {"rule": "segment", "bucket": name, "n": int(sel.sum()), "auc": auc(scores[sel], batch.labels[sel]) if sel.any() else None}
                for name, sel in (("warm", ~cold), ("cold", cold))
            ]
        )
        report.buckets = pd.concat([report.buckets, segment], ignore_index=True)
    return report


def segment_auc(report: MetricReport, bucket: str = "cold") -> Optional[float]:
    rows = report.buckets[(report.buckets["rule"] == "segment") & (report.buckets["bucket"] == bucket)] if not report.buckets.empty else []
    return None if len(rows) == 0 else rows["auc"].iloc[0]


# ---------------------------------------------------------------------
# ABLATIONS
# ---------------------------------------------------------------------
def compare_ablations(
    config: RunConfig,
    seeds: Sequence[int],
    ablations: Sequence[str] = ABLATIONS,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Every (ablation, seed) trained on the data of its seed; returns (runs, summary with RelaImpr)."""
    rows = []
    for seed in seeds:
        seeded = config.replace(seed=seed, **{"synthetic.seed": seed})
        data = prepare_data(seeded)
        for ablation in ablations:
            run = seeded.replace(**{"trainer.ablation": ablation})
            if config.compare.sweep_lr:
                lr, _ = sweep_learning_rates(run, data)
                run = run.replace(**{"trainer.lr": lr})
            logger.info("⚙️ Running %s (seed %d)", ablation, seed)
            bundle, result = train_model(run, data, progress=False)
            report = evaluate_split(bundle, data.test, data.stats, run)
            rows.append(
                {
                    "ablation": ablation,
                    "seed": seed,
                    "lr": run.trainer.lr,
                    "best_epoch": result.best_epoch,
                    "auc": report.auc,
                    "uauc": report.uauc,
                    "cold_auc": segment_auc(report, "cold"),
                }
            )
    runs = pd.DataFrame(rows)
    summary = summarize_runs(runs)
    if "base_only" in summary.index:
        for metric in ("auc", "uauc", "cold_auc"):
            summary = calculate_impact(summary, metric)
    return runs, summary


# ---------------------------------------------------------------------
# GRADIENT CHECK
# ---------------------------------------------------------------------
def gradcheck_data(config: RunConfig, dim: int) -> PreparedData:
    """A tiny seeded synthetic set; every feature kind and a sequence feature are present."""
    synth = SynthConfig(
        n_users=12, n_items=10, n_samples=80, n_meta=1, meta_vocab=3, n_authors=4,
        history_len=2, days=10, cold_fraction=0.0, seed=config.seed,
    )
    data = generate_synthetic(synth, dim)
    return PreparedData(data.train, data.val, data.test, data.stats, data.truth)


def gradcheck_model_config(kind: str, hidden: int) -> ModelConfig:
    return ModelConfig(kind=kind, hidden=[hidden, 1], tower_hidden=[hidden], latent=hidden)


def corrupt_first_gradient(analytic: dict[str, np.ndarray]) -> None:
    """Negative control: scale the first non-zero analytic gradient by 1.5."""
    for grad in analytic.values():
        if np.any(grad != 0):
            grad *= 1.5
            return


def run_gradcheck(
    config: RunConfig,
    model_kinds: Sequence[str] | None = None,
    corrupt_gradient: bool = False,
) -> pd.DataFrame:
    """Finite-difference check of the training objective for each (model, ablation)."""
    gc = config.gradcheck
    kinds = list(model_kinds) if model_kinds is not None else [config.model.kind]
    unknown = [k for k in kinds if k not in MODEL_KINDS]
    if unknown:
        raise ValueError(f"❌ Unknown model kinds {unknown}")
    data = gradcheck_data(config, gc.dim)
    batch = data.train.encode().take(np.arange(min(gc.batch, len(data.train))))
    mask = replace(config.mask, k=max(config.mask.k, 1))
    adapter = AdapterConfig(
        enabled=True,
        hidden=gc.hidden,
        activation_out=config.adapter.activation_out,
        stop_gradient=config.adapter.stop_gradient,
        source=config.adapter.source,
        zero_init_output=False,
        active_edges=config.adapter.active_edges,
        count_cap=config.adapter.count_cap,
    )
    rows = []
    for kind in kinds:
        for ablation in ABLATIONS:
            trainer = replace(config.trainer, ablation=ablation)
            bundle = ModelBundle(
                data.schema,
                gradcheck_model_config(kind, gc.hidden),
                adapter,
                use_adapter=uses_adapter(adapter, trainer),
                user_count_columns=data.stats.user_count_columns,
                item_count_columns=data.stats.item_count_columns,
            ).initialize(config.seed)
            report = check_gradients(
                bundle, batch, data.stats, mask, trainer,
                eps=gc.eps, max_coords=gc.max_coords, seed=config.seed,
                perturb_analytic=corrupt_first_gradient if corrupt_gradient else None,
            )
            rows.append(
                {
                    "model": kind,
                    "ablation": ablation,
                    "max_rel_error": report.max_rel_error,
                    "worst": report.worst,
                    "checked": report.checked,
                    "passed": report.passed(gc.tol),
                }
            )
            status = "✅" if report.passed(gc.tol) else "❌"
            logger.info("%s %-9s %-12s max rel error %.3e (%s)", status, kind, ablation, report.max_rel_error, report.worst)
    return pd.DataFrame(rows)
