"""
modeling.py
-----------
Base models g(·) over per-feature embeddings. Each maps an EmbeddingSet to
one logit per sample and counts its forward calls.

- MLP: concatenated embeddings through a ReLU stack
- FM: pairwise inner products of sum-pooled user, item and context fields
- two-tower: separate user and item towers scored by their dot product

Main functions:
- ModelConfig
- build_model(config, schema) -> BaseModel
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .embedding import EmbeddingSet, FeatureSchema
from .tensor import ComputeTape, Parameter, Tensor, add, add_bias, affine, concat, constant, relu, rowdot, sigmoid

MODEL_KINDS = ("mlp", "fm", "two_tower")
USER_TOWER_KINDS = ("user", "context")  # context rides with the user tower
ITEM_TOWER_KINDS = ("item",)


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "mlp"
    hidden: List[int] = field(default_factory=lambda: [512, 128, 1])
    tower_hidden: List[int] = field(default_factory=lambda: [256])
    latent: int = 64
    fm_bias: bool = True

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}, got '{self.kind}'")
        if not self.hidden or self.hidden[-1] != 1 or min(self.hidden) < 1:
            raise ValueError(f"hidden dims must be positive and end in 1, got {list(self.hidden)}")
        if self.latent < 1 or any(h < 1 for h in self.tower_hidden):
            raise ValueError("latent and tower_hidden dims must be positive")
        object.__setattr__(self, "hidden", list(self.hidden))
        object.__setattr__(self, "tower_hidden", list(self.tower_hidden))


# ---------- Dense stack ----------
class DenseStack:
    """Affine layers with ReLU between them; the last layer stays linear."""

    def __init__(self, in_width: int, dims: List[int], prefix: str):
        self.in_width = in_width
        widths = [in_width] + list(dims)
        self.layers = [
            (
                Parameter(np.zeros((widths[j + 1], widths[j])), name=f"{prefix}/{j}/W"),
                Parameter(np.zeros(widths[j + 1]), name=f"{prefix}/{j}/b"),
            )
            for j in range(len(dims))
        ]

    @property
    def out_width(self) -> int:
        return self.layers[-1][0].shape[0]

    def initialize(self, rng: np.random.Generator) -> None:
        for W, b in self.layers:
            bound = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            W.assign(rng.uniform(-bound, bound, size=W.shape))
            b.assign(np.zeros(b.shape))

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer]

    def forward(self, tape: ComputeTape, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_width:
            raise ValueError(f"❌ Dense stack expects width {self.in_width}, got shape {x.shape}")
        h = x
        for j, (W, b) in enumerate(self.layers):
            h = affine(tape, h, W, b)
            if j < len(self.layers) - 1:
                h = relu(tape, h)
        return h


# ---------- Models ----------
class BaseModel:
    """g(·): EmbeddingSet -> click logit. ``forward_calls`` counts invocations."""

    kind = "base"

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        self.forward_calls = 0

    def parameters(self) -> list[Parameter]:
        raise NotImplementedError

    def initialize(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _logits(self, tape: ComputeTape, embedding_set: EmbeddingSet) -> Tensor:
        raise NotImplementedError

    def logits(self, tape: ComputeTape, embedding_set: EmbeddingSet) -> Tensor:
        if len(embedding_set) != self.schema.n:
            raise ValueError(f"❌ {self.kind} model expects {self.schema.n} embeddings, got {len(embedding_set)}")
        self.forward_calls += 1
        return self._logits(tape, embedding_set)

    def predict(self, tape: ComputeTape, embedding_set: EmbeddingSet) -> Tensor:
        return sigmoid(tape, self.logits(tape, embedding_set))


class MLPModel(BaseModel):
    """Concatenate [v₁ … vₙ] and run a ReLU MLP down to one logit."""

    kind = "mlp"

    def __init__(self, schema: FeatureSchema, config: ModelConfig):
        super().__init__(schema)
        self.stack = DenseStack(schema.n * schema.dim, config.hidden, "model/mlp")

    def parameters(self):
        return self.stack.parameters()

    def initialize(self, rng):
        self.stack.initialize(rng)

    def _logits(self, tape, embedding_set):
        return self.stack.forward(tape, concat(tape, embedding_set.vectors))


class FMModel(BaseModel):
    """Sum-pool user, item and context embeddings, then sum their pairwise inner products."""

    kind = "fm"

    def __init__(self, schema: FeatureSchema, config: ModelConfig):
        super().__init__(schema)
        self.groups = [schema.indices([kind]) for kind in ("user", "item", "context")]
        self.bias = Parameter(np.zeros(1), name="model/fm/bias") if config.fm_bias else None

    def parameters(self):
        return [self.bias] if self.bias is not None else []

    def initialize(self, rng):
        if self.bias is not None:
            self.bias.assign(np.zeros(1))

    def pools(self, tape: ComputeTape, embedding_set: EmbeddingSet) -> list[Tensor]:
        pooled = []
        for group in self.groups:
            if not group:
                pooled.append(constant(np.zeros((embedding_set.batch_size, self.schema.dim))))
                continue
            acc = embedding_set.vectors[group[0]]
            for i in group[1:]:
                acc = add(tape, acc, embedding_set.vectors[i])
            pooled.append(acc)
        return pooled

    def _logits(self, tape, embedding_set):
        u, i, c = self.pools(tape, embedding_set)
        score = add(tape, add(tape, rowdot(tape, u, i), rowdot(tape, u, c)), rowdot(tape, i, c))
        return add_bias(tape, score, self.bias) if self.bias is not None else score


class TwoTowerModel(BaseModel):
    """User tower (user + context features) and item tower, scored by their dot product."""

    kind = "two_tower"

    def __init__(self, schema: FeatureSchema, config: ModelConfig):
        super().__init__(schema)
        self.user_indices = schema.indices(USER_TOWER_KINDS)
        self.item_indices = schema.indices(ITEM_TOWER_KINDS)
        if not self.user_indices or not self.item_indices:
            raise ValueError("❌ Two-tower model needs at least one user-side and one item-side feature")
        dims = list(config.tower_hidden) + [config.latent]
        self.user_tower = DenseStack(len(self.user_indices) * schema.dim, dims, "model/user_tower")
        self.item_tower = DenseStack(len(self.item_indices) * schema.dim, dims, "model/item_tower")

    def parameters(self):
        return self.user_tower.parameters() + self.item_tower.parameters()

    def initialize(self, rng):
        self.user_tower.initialize(rng)
        self.item_tower.initialize(rng)

    def user_vectors(self, tape: ComputeTape, user_set: EmbeddingSet) -> Tensor:
        return self.user_tower.forward(tape, concat(tape, user_set.vectors))

    def item_vectors(self, tape: ComputeTape, item_set: EmbeddingSet) -> Tensor:
        return self.item_tower.forward(tape, concat(tape, item_set.vectors))

    def score(self, tape: ComputeTape, user_vec: Tensor, item_vec: Tensor) -> Tensor:
        if user_vec.shape != item_vec.shape:
            raise ValueError(f"❌ Latent width mismatch: user {user_vec.shape} vs item {item_vec.shape}")
        return rowdot(tape, user_vec, item_vec)

    def _logits(self, tape, embedding_set):
        user_vec = self.user_vectors(tape, embedding_set.select(self.user_indices))
        item_vec = self.item_vectors(tape, embedding_set.select(self.item_indices))
        return self.score(tape, user_vec, item_vec)


def build_model(config: ModelConfig, schema: FeatureSchema) -> BaseModel:
    builders = {"mlp": MLPModel, "fm": FMModel, "two_tower": TwoTowerModel}
    return builders[config.kind](schema, config)
