"""
adapter.py
----------
State-aware adapter: empirical state signals [r_active, r_ID, r_norm, r_count],
the weight generator h(·) with sigmoid output, element-wise feature weighting,
and the self-weight baseline that derives weights from the embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Protocol, Sequence

import numpy as np

from .embedding import EmbeddingSet, FeatureBatch, FeatureSchema, id_norm_features
from .tensor import (
    ComputeTape,
    Parameter,
    Tensor,
    activation,
    affine,
    concat,
    constant,
    detach,
    relu,
    scale_rows,
    take_column,
)

SIDES = ("all", "user", "item")
SOURCES = ("state", "self")
ACTIVE_EDGES = (0, 1, 2, 3, 5, 10, 20, 30)  # buckets 0,1,2,3-4,5-9,10-19,20-29,30
ACTIVE_WINDOWS = (7, 30)


@dataclass(frozen=True)
class AdapterConfig:
    enabled: bool = True
    hidden: int = 128
    activation_out: str = "sigmoid"
    stop_gradient: bool = False
    source: str = "state"
    zero_init_output: bool = True
    active_edges: tuple[int, ...] = ACTIVE_EDGES
    count_cap: int = 20

    def __post_init__(self):
        if self.hidden < 0:
            raise ValueError("hidden must be ≥ 0")
        if self.activation_out not in ("sigmoid", "softmax"):
            raise ValueError(f"activation_out must be sigmoid or softmax, got '{self.activation_out}'")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got '{self.source}'")
        edges = tuple(self.active_edges)
        if not edges or edges[0] != 0 or list(edges) != sorted(set(edges)):
            raise ValueError("active_edges must start at 0 and be strictly increasing")
        if self.count_cap < 0:
            raise ValueError("count_cap must be ≥ 0")
        object.__setattr__(self, "active_edges", edges)


class StateStats(Protocol):
    """What the adapter needs from a statistics store."""

    user_count_columns: Sequence[str]
    item_count_columns: Sequence[str]

    def user_active(self, user_keys: np.ndarray, timestamps: np.ndarray | None = None) -> np.ndarray: ...
    def user_counts(self, user_keys: np.ndarray) -> np.ndarray: ...
    def item_counts(self, item_keys: np.ndarray) -> np.ndarray: ...


# ===============================================================
# BUCKETS
# ===============================================================
def bucketize_active(days: np.ndarray, edges: Sequence[int] = ACTIVE_EDGES) -> np.ndarray:
    """One-hot active-day bucket; unknown (NaN) entities give an all-zero row."""
    days = np.asarray(days, dtype=np.float64).reshape(-1)
    out = np.zeros((len(days), len(edges)))
    known = ~np.isnan(days)
    if np.any(days[known] < 0):
        raise ValueError("❌ Active-day counts must be non-negative")
    idx = np.searchsorted(np.asarray(edges), days[known], side="right") - 1
    out[np.flatnonzero(known), idx] = 1.0
    return out


def bucketize_counts(counts: np.ndarray, cap: int = 20) -> np.ndarray:
    """One-hot floor(log2 c) capped at ``cap``; zero or unknown counts give an all-zero row."""
    counts = np.asarray(counts, dtype=np.float64).reshape(-1)
    out = np.zeros((len(counts), cap + 1))
    known = ~np.isnan(counts)
    if np.any(counts[known] < 0):
        raise ValueError("❌ Interaction counts must be non-negative")
    rows = np.flatnonzero(known & (counts > 0))
    idx = np.minimum(np.floor(np.log2(counts[rows])).astype(np.int64), cap)
    out[rows, idx] = 1.0
    return out


# ===============================================================
# STATE SIGNALS
# ===============================================================
def side_kinds(side: str) -> tuple[str, ...]:
    return {"all": ("user", "item", "context"), "user": ("user",), "item": ("item",)}[side]


@dataclass
class StateSignals:
    active: np.ndarray
    ids: Tensor
    norms: Tensor
    counts: np.ndarray

    @property
    def width(self) -> int:
        return self.active.shape[1] + self.ids.shape[1] + self.norms.shape[1] + self.counts.shape[1]

    def tensor(self, tape: ComputeTape) -> Tensor:
        return concat(tape, [constant(self.active), self.ids, self.norms, constant(self.counts)])


def signal_width(
    schema: FeatureSchema,
    user_count_columns: Sequence[str],
    item_count_columns: Sequence[str],
    config: AdapterConfig,
    side: str = "all",
) -> int:
    m = len(schema.state_ids(side_kinds(side)))
    active = len(ACTIVE_WINDOWS) * len(config.active_edges) if side in ("all", "user") else 0
    n_counts = (len(user_count_columns) if side in ("all", "user") else 0) + (
        len(item_count_columns) if side in ("all", "item") else 0
    )
    return active + m * schema.dim + 4 * m + n_counts * (config.count_cap + 1)


def build_state_signals(
    tape: ComputeTape,
    schema: FeatureSchema,
    embedding_set: EmbeddingSet,
    batch: FeatureBatch,
    stats: StateStats,
    config: AdapterConfig,
    side: str = "all",
) -> StateSignals:
    """Fixed-order concatenation of the four signal families for one side.

    The user side never sees item statistics or item IDs and vice versa.
    """
    if side not in SIDES:
        raise ValueError(f"❌ Unknown side '{side}' (expected one of {SIDES})")
    B = len(batch)
    user_side, item_side = side in ("all", "user"), side in ("all", "item")

    active = np.zeros((B, 0))
    if user_side:
        days = stats.user_active(batch.user_keys, batch.timestamps)
        active = np.hstack([bucketize_active(days[:, w], config.active_edges) for w in range(days.shape[1])])

    source = embedding_set
    if config.stop_gradient:
        source = EmbeddingSet([detach(v) for v in embedding_set.vectors], embedding_set.masked)
    ids = schema.state_ids(side_kinds(side))
    r_id = concat(tape, [source.vectors[i] for i in ids]) if ids else constant(np.zeros((B, 0)))
    r_norm = id_norm_features(tape, schema, source, side_kinds(side))

    blocks = []
    if user_side:
        raw = stats.user_counts(batch.user_keys)
        blocks.extend(bucketize_counts(raw[:, j], config.count_cap) for j in range(raw.shape[1]))
    if item_side:
        raw = stats.item_counts(batch.item_keys)
        blocks.extend(bucketize_counts(raw[:, j], config.count_cap) for j in range(raw.shape[1]))
    counts = np.hstack(blocks) if blocks else np.zeros((B, 0))
    return StateSignals(active, r_id, r_norm, counts)


# ===============================================================
# WEIGHT GENERATOR
# ===============================================================
class AdaptiveWeights:
    """Per-feature weights (B, n) that count how often they are read.

    ``total_reads`` counts reads across all instances, so a caller can check
    that a code path never touched any adaptive weights.
    """

    total_reads: ClassVar[int] = 0

    def __init__(self, tensor: Tensor):
        self._tensor = tensor
        self.reads = 0

    @property
    def tensor(self) -> Tensor:
        self.reads += 1
        AdaptiveWeights.total_reads += 1
        return self._tensor

    @property
    def values(self) -> np.ndarray:
        return self.tensor.value

    @property
    def n(self) -> int:
        return self._tensor.shape[1]


class StateAdapter:
    """h(·): one ReLU hidden layer then an affine map to one weight per feature."""

    def __init__(self, in_width: int, n_out: int, config: AdapterConfig, prefix: str = "adapter"):
        self.in_width, self.n_out, self.config = in_width, n_out, config
        dims = [in_width] + ([config.hidden] if config.hidden else []) + [n_out]
        self.layers = [
            (
                Parameter(np.zeros((dims[j + 1], dims[j])), name=f"{prefix}/{j}/W"),
                Parameter(np.zeros(dims[j + 1]), name=f"{prefix}/{j}/b"),
            )
            for j in range(len(dims) - 1)
        ]

    def initialize(self, rng: np.random.Generator) -> None:
        last = len(self.layers) - 1
        for j, (W, b) in enumerate(self.layers):
            if j == last and self.config.zero_init_output:
                W.assign(np.zeros(W.shape))
            else:
                bound = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
                W.assign(rng.uniform(-bound, bound, size=W.shape))
            b.assign(np.zeros(b.shape))

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer]

    def forward(self, tape: ComputeTape, x: Tensor) -> AdaptiveWeights:
        if x.value.ndim != 2 or x.shape[1] != self.in_width:
            raise ValueError(f"❌ Adapter expects input width {self.in_width}, got shape {x.shape}")
        h = x
        last = len(self.layers) - 1
        for j, (W, b) in enumerate(self.layers):
            h = affine(tape, h, W, b)
            if j < last:
                h = relu(tape, h)
        return AdaptiveWeights(activation(tape, h, self.config.activation_out))


def adapter_forward(tape: ComputeTape, signals: StateSignals, adapter: StateAdapter) -> AdaptiveWeights:
    return adapter.forward(tape, signals.tensor(tape))


def self_weight_baseline(tape: ComputeTape, embedding_set: EmbeddingSet, generator: StateAdapter) -> AdaptiveWeights:
    """Weights generated from the concatenated embeddings themselves."""
    return generator.forward(tape, concat(tape, embedding_set.vectors))


def apply_weights(tape: ComputeTape, weights: AdaptiveWeights | Tensor, embedding_set: EmbeddingSet) -> EmbeddingSet:
    """a(vᵢ) = wᵢ vᵢ, feature by feature."""
    w = weights.tensor if isinstance(weights, AdaptiveWeights) else weights
    if w.value.ndim != 2 or w.shape != (embedding_set.batch_size, len(embedding_set)):
        raise ValueError(f"❌ Weight shape {w.shape} does not match {len(embedding_set)} embeddings of batch {embedding_set.batch_size}")
    vectors = [scale_rows(tape, v, take_column(tape, w, i)) for i, v in enumerate(embedding_set.vectors)]
    return EmbeddingSet(vectors, embedding_set.masked.copy())
