"""
embedding.py
------------
Feature schema, embedding tables with per-feature mask rows, batch encoding
and the lookup that turns raw feature values into [v₁ … vₙ].

Main functions:
- FeatureSchema.from_yaml(path)
- encode_frame(schema, frame)            -> FeatureBatch
- lookup(tape, schema, tables, batch)    -> EmbeddingSet
- mask_row(tables, i)
- id_norm_features(tape, schema, embedding_set, kinds)
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import yaml

from .tensor import ComputeTape, Parameter, Tensor, concat, constant, gather, l2_norm_rows, log1p, pooled_gather, sqrt, square, where_rows

logger = logging.getLogger(__name__)

FEATURE_KINDS = ("user", "item", "context")
FEATURE_CLASSES = ("id_based", "meta")
OOV_INDEX = 0

# frame columns that are not features
LABEL_COL, USER_COL, ITEM_COL, TIME_COL = "label", "user", "item", "timestamp"


# ===============================================================
# SCHEMA
# ===============================================================
@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    feature_class: str
    vocab: int
    is_sequence: bool = False
    state_id: bool = False  # feeds r_ID / r_norm of the adapter
    max_len: int = 8

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"❌ Feature '{self.name}': kind must be one of {FEATURE_KINDS}, got '{self.kind}'")
        if self.feature_class not in FEATURE_CLASSES:
            raise ValueError(f"❌ Feature '{self.name}': class must be one of {FEATURE_CLASSES}, got '{self.feature_class}'")
        if self.vocab < 1:
            raise ValueError(f"❌ Feature '{self.name}': vocab must be ≥ 1")
        if self.feature_class == "id_based" and self.vocab <= 1:
            raise ValueError(f"❌ Feature '{self.name}': id_based features need vocab > 1")
        if self.state_id and (self.is_sequence or self.feature_class != "id_based"):
            raise ValueError(f"❌ Feature '{self.name}': state IDs must be scalar id_based features")
        if self.is_sequence and self.feature_class != "id_based":
            raise ValueError(f"❌ Feature '{self.name}': sequence features must be id_based")
        if self.is_sequence and self.max_len < 1:
            raise ValueError(f"❌ Feature '{self.name}': max_len must be ≥ 1")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature descriptors; index i of vᵢ is the schema position."""

    features: tuple[FeatureSpec, ...]
    dim: int = 16

    def __post_init__(self):
        names = [f.name for f in self.features]
        if not names:
            raise ValueError("❌ Schema has no features")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"❌ Duplicate feature names in schema: {dupes}")
        if self.dim < 1:
            raise ValueError("❌ Embedding dimension must be ≥ 1")

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"❌ Unknown feature '{name}'") from None

    def indices(self, kinds: Iterable[str] | None = None, feature_class: str | None = None) -> list[int]:
        kinds = tuple(kinds) if kinds is not None else FEATURE_KINDS
        return [
            i
            for i, f in enumerate(self.features)
            if f.kind in kinds and (feature_class is None or f.feature_class == feature_class)
        ]

    def state_ids(self, kinds: Iterable[str] | None = None) -> list[int]:
        kinds = tuple(kinds) if kinds is not None else FEATURE_KINDS
        return [i for i, f in enumerate(self.features) if f.state_id and f.kind in kinds]

    # --- declarative config ---
    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSchema":
        feats = []
        for entry in data.get("features", []):
            entry = dict(entry)
            if "class" in entry:
                entry["feature_class"] = entry.pop("class")
            if "sequence" in entry:
                entry["is_sequence"] = entry.pop("sequence")
            feats.append(FeatureSpec(**entry))
        return cls(tuple(feats), int(data.get("dim", 16)))

    @classmethod
    def from_yaml(cls, path: str | Path) -> "FeatureSchema":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"❌ Schema file not found: {path}")
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            entry = asdict(f)
            entry["class"] = entry.pop("feature_class")
            entry["sequence"] = entry.pop("is_sequence")
            feats.append(entry)
        return {"dim": self.dim, "features": feats}

    def to_yaml(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


# ===============================================================
# TABLES
# ===============================================================
class EmbeddingTables:
    """One V×d table and one distinct 1×d mask row per feature."""

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        d = schema.dim
        self.tables = [Parameter(np.zeros((f.vocab, d)), name=f"embedding/{f.name}") for f in schema.features]
        self.masks = [Parameter(np.zeros((1, d)), name=f"mask/{f.name}") for f in schema.features]

    def initialize(self, rng: np.random.Generator) -> None:
        bound = 1.0 / np.sqrt(self.schema.dim)
        for p in self.tables + self.masks:
            p.assign(rng.uniform(-bound, bound, size=p.shape))

    def parameters(self) -> list[Parameter]:
        return self.tables + self.masks


def mask_row(tables: EmbeddingTables, feature_index: int) -> Parameter:
    if not 0 <= feature_index < len(tables.masks):
        raise IndexError(f"❌ Feature index {feature_index} out of range (schema has {len(tables.masks)} features)")
    return tables.masks[feature_index]


# ===============================================================
# BATCHES
# ===============================================================
@dataclass
class FeatureBatch:
    """Integer-encoded features for a set of samples."""

    values: dict[str, np.ndarray]            # scalar: (B,), sequence: (B, L) zero-padded
    lengths: dict[str, np.ndarray]           # sequence features only
    labels: np.ndarray
    user_keys: np.ndarray
    item_keys: np.ndarray
    timestamps: np.ndarray | None = None
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "FeatureBatch":
        idx = np.asarray(idx)
        return FeatureBatch(
            values={k: v[idx] for k, v in self.values.items()},
            lengths={k: v[idx] for k, v in self.lengths.items()},
            labels=self.labels[idx],
            user_keys=self.user_keys[idx],
            item_keys=self.item_keys[idx],
            timestamps=None if self.timestamps is None else self.timestamps[idx],
            extras={k: v[idx] for k, v in self.extras.items()},
        )


def _as_sequence(entry) -> list[int]:
    if entry is None or (isinstance(entry, float) and np.isnan(entry)):
        return []
    if isinstance(entry, str):
        return [int(tok) for tok in entry.split("|") if tok != ""]
    return [int(v) for v in entry]


def encode_sequence(column: Sequence, vocab: int, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Pad/truncate (keeping the most recent max_len elements); OOV → 0."""
    out = np.zeros((len(column), max_len), dtype=np.int64)
    lengths = np.zeros(len(column), dtype=np.int64)
    for row, entry in enumerate(column):
        seq = _as_sequence(entry)[-max_len:]
        if seq:
            arr = np.asarray(seq, dtype=np.int64)
            arr[(arr < 0) | (arr >= vocab)] = OOV_INDEX
            out[row, : len(arr)] = arr
            lengths[row] = len(arr)
    return out, lengths


def encode_frame(schema: FeatureSchema, frame: pd.DataFrame, extras: Sequence[str] = ()) -> FeatureBatch:
    missing = [name for name in schema.names + [LABEL_COL, USER_COL, ITEM_COL] if name not in frame.columns]
    if missing:
        raise KeyError(f"❌ Frame is missing columns required by the schema: {missing}")
    values, lengths = {}, {}
    for f in schema.features:
        if f.is_sequence:
            values[f.name], lengths[f.name] = encode_sequence(frame[f.name].tolist(), f.vocab, f.max_len)
        else:
            col = frame[f.name].to_numpy(dtype=np.int64)
            values[f.name] = np.where((col < 0) | (col >= f.vocab), OOV_INDEX, col)
    timestamps = frame[TIME_COL].to_numpy(dtype=np.float64) if TIME_COL in frame.columns else None
    return FeatureBatch(
        values=values,
        lengths=lengths,
        labels=frame[LABEL_COL].to_numpy(dtype=np.float64),
        user_keys=frame[USER_COL].to_numpy(),
        item_keys=frame[ITEM_COL].to_numpy(),
        timestamps=timestamps,
        extras={c: frame[c].to_numpy() for c in extras if c in frame.columns},
    )


# ===============================================================
# LOOKUP
# ===============================================================
@dataclass
class EmbeddingSet:
    """[v₁ … vₙ] for a batch: n tensors of shape (B, d) plus masked flags (B, n)."""

    vectors: list[Tensor]
    masked: np.ndarray

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def batch_size(self) -> int:
        return self.masked.shape[0]

    def select(self, indices: Sequence[int]) -> "EmbeddingSet":
        return EmbeddingSet([self.vectors[i] for i in indices], self.masked[:, list(indices)])

    def replace(self, indices: Sequence[int], vectors: Sequence[Tensor]) -> "EmbeddingSet":
        out = list(self.vectors)
        for i, v in zip(indices, vectors):
            out[i] = v
        return EmbeddingSet(out, self.masked.copy())


def lookup(tape: ComputeTape, schema: FeatureSchema, tables: EmbeddingTables, batch: FeatureBatch) -> EmbeddingSet:
    """Scalar features take one row; sequences mean-pool their rows, empty ones fall back to the mask row."""
    if len(batch.values) != schema.n or set(batch.values) != set(schema.names):
        raise ValueError(f"❌ Batch has {len(batch.values)} features, schema expects {schema.n}: {schema.names}")
    B = len(batch)
    masked = np.zeros((B, schema.n), dtype=bool)
    vectors = []
    for i, f in enumerate(schema.features):
        table = tables.tables[i]
        if not f.is_sequence:
            vectors.append(gather(tape, table, batch.values[f.name]))
            continue
        idx, lens = batch.values[f.name], batch.lengths[f.name]
        positions = np.arange(idx.shape[1])[None, :]
        weights = (positions < lens[:, None]) / np.maximum(lens, 1)[:, None]
        pooled = pooled_gather(tape, table, idx, weights)
        empty = lens == 0
        if empty.any():
            pooled = where_rows(tape, empty, tables.masks[i], pooled)
            masked[:, i] = empty
        vectors.append(pooled)
    return EmbeddingSet(vectors, masked)


def id_norm_features(
    tape: ComputeTape,
    schema: FeatureSchema,
    embedding_set: EmbeddingSet,
    kinds: Iterable[str] | None = None,
) -> Tensor:
    """[‖v‖, log(1+‖v‖), √‖v‖, ‖v‖²] for each designated ID embedding, in schema order."""
    ids = schema.state_ids(kinds)
    if not ids:
        return constant(np.zeros((embedding_set.batch_size, 0)))
    parts = []
    for i in ids:
        norm = l2_norm_rows(tape, embedding_set.vectors[i])
        parts.extend([norm, log1p(tape, norm), sqrt(tape, norm), square(tape, norm)])
    return concat(tape, parts)
