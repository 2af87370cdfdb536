"""
===============================================================
Ablation Comparison Utilities
===============================================================
Tabulates repeated runs of the four training ablations and their
relative improvement over the base-only model.

Main functions:
- ablation_overrides(ablation)
- summarize_runs(runs)
- calculate_impact(summary, metric, baseline)
===============================================================
"""

from __future__ import annotations

import pandas as pd

from .metrics import rela_impr
from .training import ABLATIONS

__all__ = [
    "ablation_overrides",
    "summarize_runs",
    "calculate_impact",
]

METRIC_COLUMNS = ("auc", "uauc", "cold_auc")


# ===============================================================
# ABLATION SETTINGS
# ===============================================================
def ablation_overrides(ablation: str) -> dict:
    """Dotted config overrides that select one ablation."""
    if ablation not in ABLATIONS:
        raise ValueError(f"Unknown ablation: {ablation}")
    return {"trainer.ablation": ablation}


# ===============================================================
# SUMMARY
# ===============================================================
def summarize_runs(runs: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and standard deviation of every metric per ablation.

    Parameters
    ----------
    runs : pd.DataFrame
        One row per (ablation, seed) with columns from METRIC_COLUMNS.
        Undefined metrics are None and are skipped.

    Returns
    -------
    pd.DataFrame
        Indexed by ablation in canonical order, with `<metric>` (mean),
        `<metric>_std` and `n_seeds` columns.
    """
    metrics = [m for m in METRIC_COLUMNS if m in runs.columns]
    numeric = runs[["ablation", *metrics]].copy()
    numeric[metrics] = numeric[metrics].astype(float)
    grouped = numeric.groupby("ablation")
    summary = grouped[metrics].mean()
    std = grouped[metrics].std(ddof=0).add_suffix("_std")
    summary = summary.join(std)
    summary["n_seeds"] = grouped.size()
    order = [a for a in ABLATIONS if a in summary.index]
    return summary.reindex(order)


def calculate_impact(summary: pd.DataFrame, metric: str = "auc", baseline: str = "base_only") -> pd.DataFrame:
    """
    Add `<metric>_relaimpr` (%) of every ablation against the baseline row.
    """
    if baseline not in summary.index:
        raise ValueError(f"Baseline '{baseline}' missing from summary: {list(summary.index)}")
    out = summary.copy()
    base = out.loc[baseline, metric]
    base = None if pd.isna(base) else float(base)
    out[f"{metric}_relaimpr"] = [
        rela_impr(None if pd.isna(v) else float(v), base) for v in out[metric]
    ]
    return out
