"""
dataset.py
-----------------
Labelled samples under a feature schema, seeded random splits, and the
columnar text / Parquet round trip used by `gen-synth`.

Frame layout:
    one column per schema feature (sequences as "a|b|c" strings),
    label ∈ {0,1}, user, item, optional timestamp (unix seconds),
    optional extras (cold, like, comment)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from utils.embedding import ITEM_COL, LABEL_COL, TIME_COL, USER_COL, FeatureBatch, FeatureSchema, encode_frame
from utils.training import rng_stream

logger = logging.getLogger(__name__)

SPLITS = ("all", "train", "val", "test")
SPLIT_STREAM = 4
EXTRA_COLUMNS = ("cold", "like", "comment")


@dataclass(frozen=True)
class Dataset:
    frame: pd.DataFrame
    schema: FeatureSchema
    split: str = "all"
    name: str = "dataset"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"❌ Unknown split '{self.split}' (expected one of {SPLITS})")
        required = self.schema.names + [LABEL_COL, USER_COL, ITEM_COL]
        missing = [c for c in required if c not in self.frame.columns]
        if missing:
            raise KeyError(f"❌ {self.name}: missing columns {missing}")
        bad = ~self.frame[LABEL_COL].isin([0, 1])
        if bad.any():
            raise ValueError(f"❌ {self.name}: {int(bad.sum())} labels outside {{0,1}}")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def has_timestamps(self) -> bool:
        return TIME_COL in self.frame.columns and self.frame[TIME_COL].notna().all()

    def with_frame(self, frame: pd.DataFrame, split: str) -> "Dataset":
        return replace(self, frame=frame.reset_index(drop=True), split=split)

    def encode(self, extras: Sequence[str] = EXTRA_COLUMNS) -> FeatureBatch:
        return encode_frame(self.schema, self.frame, extras)

    # --- columnar I/O ---
    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix == ".parquet":
            self.frame.to_parquet(path, index=False)
        else:
            self.frame.to_csv(path, index=False)
        logger.info("💾 Saved %s (%s, %s rows) → %s", self.name, self.split, f"{len(self):,}", path)
        return path

    @classmethod
    def load(cls, path: str | Path, schema: FeatureSchema, split: str = "all", name: str | None = None) -> "Dataset":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"❌ Dataset file not found: {path}")
        if path.suffix == ".parquet":
            frame = pd.read_parquet(path)
        else:
            seq_cols = {f.name: str for f in schema.features if f.is_sequence}
            frame = pd.read_csv(path, dtype=seq_cols, keep_default_na=False, na_values={TIME_COL: [""]})
        return cls(frame, schema, split, name or path.stem)


def join_sequence(values) -> str:
    return "|".join(str(int(v)) for v in values)


# ---------------------------------------------------------------------
# SPLITS
# ---------------------------------------------------------------------
def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, ...]:
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.ndim != 1 or len(ratios) < 2 or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0) or ratios[0] == 0:
        raise ValueError(f"❌ Degenerate split ratios {ratios.tolist()}: need non-negative values summing to 1 with a training share")
    bounds = np.rint(np.cumsum(ratios) * n).astype(np.int64)
    bounds[-1] = n
    return tuple(np.diff(np.concatenate([[0], bounds])).tolist())


def split_random(dataset: Dataset, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0) -> tuple[Dataset, ...]:
    """Seeded uniform partition into train/val/test."""
    if len(ratios) != 3:
        raise ValueError(f"❌ split_random needs three ratios (train, val, test), got {list(ratios)}")
    sizes = split_sizes(len(dataset), ratios)
    order = rng_stream(seed, SPLIT_STREAM).permutation(len(dataset))
    parts, start = [], 0
    for size, split in zip(sizes, ("train", "val", "test")):
        parts.append(dataset.with_frame(dataset.frame.iloc[np.sort(order[start : start + size])], split))
        start += size
    logger.info("✂️ Split %s → %s", dataset.name, " / ".join(f"{len(p):,}" for p in parts))
    return tuple(parts)
