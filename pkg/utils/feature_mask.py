"""
feature_mask.py
---------------
Feature-mask augmentation: k masked copies of every sample, each feature
swapped for its own trainable mask row with probability p ~ U[beta, gamma],
and the task-oriented auxiliary loss over their predictions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import EmbeddingSet, EmbeddingTables
from .tensor import ComputeTape, Tensor, bce_with_logits, constant, linear_combination, where_rows


@dataclass(frozen=True)
class MaskConfig:
    k: int = 1
    beta: float = 0.1
    gamma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"k must be ≥ 0, got {self.k}")
        if not 0.0 <= self.beta <= self.gamma <= 1.0:
            raise ValueError(f"need 0 ≤ beta ≤ gamma ≤ 1, got beta={self.beta}, gamma={self.gamma}")

    @property
    def enabled(self) -> bool:
        return self.k > 0


@dataclass
class AugmentedBatch:
    variants: list[EmbeddingSet]
    probabilities: np.ndarray  # (B, k)


def sample_probabilities(config: MaskConfig, rng: np.random.Generator, batch_size: int | None = None) -> np.ndarray:
    """k draws from U[beta, gamma]; shape (k,) or (batch_size, k)."""
    shape = (config.k,) if batch_size is None else (batch_size, config.k)
    return rng.uniform(config.beta, config.gamma, size=shape)


def apply_mask(
    tape: ComputeTape,
    embedding_set: EmbeddingSet,
    tables: EmbeddingTables,
    p,
    rng: np.random.Generator,
) -> EmbeddingSet:
    """Replace each feature by its mask row with probability p (scalar or per-sample).

    Features left untouched keep the identical lookup tensors.
    """
    B, n = embedding_set.batch_size, len(embedding_set)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), (B,))
    if np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("❌ Mask probability must lie in [0, 1]")
    flags = rng.random((B, n)) < p[:, None]
    vectors = []
    for i, v in enumerate(embedding_set.vectors):
        col = flags[:, i]
        vectors.append(where_rows(tape, col, tables.masks[i], v) if col.any() else v)
    return EmbeddingSet(vectors, embedding_set.masked | flags)


def augment(
    tape: ComputeTape,
    embedding_set: EmbeddingSet,
    tables: EmbeddingTables,
    config: MaskConfig,
    rng: np.random.Generator,
) -> AugmentedBatch:
    probs = sample_probabilities(config, rng, embedding_set.batch_size)
    variants = [apply_mask(tape, embedding_set, tables, probs[:, j], rng) for j in range(config.k)]
    return AugmentedBatch(variants, probs)


def auxiliary_loss(tape: ComputeTape, masked_logits: Sequence[Tensor], labels: np.ndarray, k: int) -> Tensor:
    """Σ over the k variants of the batch-mean cross-entropy against the original label.

    Normalised by batch size only, not by k.
    """
    if len(masked_logits) != k:
        raise ValueError(f"❌ Expected {k} masked predictions per sample, got {len(masked_logits)}")
    if k == 0:
        return constant(np.array(0.0))
    losses = [bce_with_logits(tape, logits, labels) for logits in masked_logits]
    return linear_combination(tape, [(1.0, l) for l in losses])
