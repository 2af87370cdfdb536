# utils/plots.py
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

from .explainability import WeightHeatmap

# ===============================================================
# Feature-weight heatmaps
# ===============================================================

def plot_weight_heatmap(heatmap: WeightHeatmap, path: str | Path, title: str | None = None) -> Path:
    """Groups × features, one annotated cell per mean weight."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_groups, n_feats = heatmap.matrix.shape
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * n_feats + 2), max(2.5, 0.6 * n_groups + 1.5)))
    labels = [f"{g} (n={int(heatmap.sizes[g]):,})" for g in heatmap.matrix.index]
    sns.heatmap(
        heatmap.matrix.set_axis(labels, axis=0),
        annot=True, fmt=".2f", cmap="viridis", vmin=0.0, vmax=1.0,
        cbar_kws={"label": "mean weight"}, ax=ax,
    )
    ax.set_title(title or f"Average feature weights – {heatmap.rule}")
    ax.set_xlabel("Feature")
    ax.set_ylabel("")
    plt.setp(ax.get_xticklabels(), rotation=45, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

# ===============================================================
# Training curves
# ===============================================================

def plot_training_curve(history: pd.DataFrame, path: str | Path) -> Path:
    """Per-epoch losses on the left, validation AUC on the right."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 2, figsize=(11, 3.5))
    for col in ("main", "aux", "total"):
        axes[0].plot(history["epoch"], history[col], marker="o", markersize=3, lw=1.5, label=col)
    axes[0].set_title("Training loss")
    axes[0].set_xlabel("Epoch")
    axes[0].legend(fontsize=8)
    axes[1].plot(history["epoch"], history["val_auc"].astype(float), marker="o", markersize=3, lw=1.5)
    axes[1].set_title("Validation AUC")
    axes[1].set_xlabel("Epoch")
    for ax in axes:
        ax.grid(alpha=0.3, linestyle="--")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
