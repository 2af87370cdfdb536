# utils/explainability.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .embedding import FeatureBatch, lookup
from .metrics import GroupRule
from .tensor import ComputeTape
from .training import ModelBundle, adaptive_weights

logger = logging.getLogger(__name__)

# ===============================================================
# ADAPTIVE FEATURE WEIGHTS
# ===============================================================

@dataclass
class WeightHeatmap:
    """Mean adaptive weight per (state group, feature)."""

    rule: str
    side: str
    matrix: pd.DataFrame      # index: group label, columns: feature names
    sizes: pd.Series          # samples per group

    def to_frame(self) -> pd.DataFrame:
        out = self.matrix.copy()
        out.insert(0, "n", self.sizes.reindex(out.index).astype(int))
        out.index.name = "group"
        return out

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path)
        logger.info("💾 Saved %s heatmap (%d groups × %d features) → %s", self.side, *self.matrix.shape, path)
        return path


def average_weights(bundle: ModelBundle, batch: FeatureBatch, stats, side: str, chunk: int = 4096) -> np.ndarray:
    """Adapter output w for every sample of `batch`, shape (B, n_side)."""
    if side not in bundle.adapters:
        raise ValueError(f"❌ Model has no '{side}' adapter (available: {sorted(bundle.adapters)})")
    blocks = []
    for start in range(0, len(batch), chunk):
        part = batch.take(np.arange(start, min(start + chunk, len(batch))))
        tape = ComputeTape()
        es = lookup(tape, bundle.schema, bundle.tables, part)
        blocks.append(adaptive_weights(tape, bundle, es, part, stats)[side].values)
    return np.vstack(blocks) if blocks else np.zeros((0, len(bundle.side_indices(side))))


def weight_heatmap(
    bundle: ModelBundle,
    batch: FeatureBatch,
    stats,
    rule: GroupRule,
    entity: str = "user",
) -> WeightHeatmap:
    """Group samples by the training-split state of their user (or item) and average w per group.

    Two-tower models use the adapter of the matching tower; single adapters
    cover every feature.
    """
    if not bundle.adapters:
        raise ValueError("❌ Checkpoint was trained without an adapter; there are no feature weights to analyse")
    side = entity if entity in bundle.adapters else "all"
    weights = average_weights(bundle, batch, stats, side)
    if entity == "user":
        state = stats.user_stat(batch.user_keys, rule.stat.removeprefix("user_"))
    else:
        state = stats.item_stat(batch.item_keys, rule.stat.removeprefix("item_"))
    groups = rule.assign(state)

    names = [bundle.schema.names[i] for i in bundle.side_indices(side)]
    frame = pd.DataFrame(weights, columns=names)
    frame["group"] = groups
    present = [g for g in rule.labels if (groups == g).any()]
    for g in rule.labels:
        if g not in present:
            logger.warning("⚠️ Heatmap %s: group '%s' has no samples → row omitted", rule.name, g)
    matrix = frame.groupby("group")[names].mean().reindex(present)
    sizes = frame["group"].value_counts().reindex(present)
    return WeightHeatmap(rule.name, side, matrix, sizes)


def mean_meta_weight(heatmap: WeightHeatmap, bundle: ModelBundle, group: str) -> float:
    """Average weight of the meta features for one group row."""
    meta = [bundle.schema.names[i] for i in bundle.schema.indices(feature_class="meta")]
    cols = [c for c in heatmap.matrix.columns if c in meta]
    if group not in heatmap.matrix.index or not cols:
        raise KeyError(f"❌ Heatmap has no row '{group}' or no meta features")
    return float(heatmap.matrix.loc[group, cols].mean())


def meta_weight_gap(heatmap: WeightHeatmap, bundle: ModelBundle, cold: str = "new", head: str = "high") -> float:
    """Meta-feature weight of the cold group minus that of the head group."""
    return mean_meta_weight(heatmap, bundle, cold) - mean_meta_weight(heatmap, bundle, head)
