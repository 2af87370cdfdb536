"""
training.py
-----------
Training and serving around one ModelBundle (tables + g(·) + adapters).

Training step, in order:
    1. k masked variants per sample
    2. auxiliary loss over their unweighted predictions
    3. adaptively weighted prediction ŷ_adapt
    4. main loss
    5. total = main + alpha · aux
    6. one Adam update over every parameter

Serving runs exactly one weighted forward and nothing else.

Main functions:
- ModelBundle / save_checkpoint / load_checkpoint
- train_step(...)      -> StepResult
- serve_predict(...)   -> probabilities
- fit(...)             -> FitResult
- check_gradients(...) -> GradCheckReport
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import joblib
import numpy as np
import pandas as pd
from tqdm import tqdm

from .adapter import (
    AdapterConfig,
    AdaptiveWeights,
    StateAdapter,
    StateStats,
    apply_weights,
    build_state_signals,
    self_weight_baseline,
    signal_width,
)
from .embedding import EmbeddingSet, EmbeddingTables, FeatureBatch, FeatureSchema, lookup
from .feature_mask import MaskConfig, augment, auxiliary_loss
from .metrics import auc
from .modeling import BaseModel, ModelConfig, TwoTowerModel, build_model
from .tensor import (
    ComputeTape,
    GradCheckReport,
    Parameter,
    Tensor,
    bce_with_logits,
    constant,
    finite_difference_check,
    linear_combination,
    stable_sigmoid,
    zero_grad,
)

logger = logging.getLogger(__name__)

ABLATIONS = ("base_only", "mask_only", "adapter_only", "full")

# random stream ids under the root seed
INIT_STREAM, SHUFFLE_STREAM, MASK_STREAM = 0, 1, 2


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


# ===============================================================
# CONFIG
# ===============================================================
@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.2
    batch_size: int = 256
    lr: float = 0.001
    lr_grid: List[float] = field(default_factory=lambda: [0.001, 0.005, 0.01, 0.02, 0.1])
    epochs: int = 3
    ablation: str = "full"
    grad_clip: Optional[float] = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 50
    eval_batch_size: int = 4096
    debug: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be ≥ 0, got {self.alpha}")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_batch_size < 1:
            raise ValueError("batch_size, eval_batch_size and epochs must be ≥ 1")
        if self.lr <= 0 or any(lr <= 0 for lr in self.lr_grid):
            raise ValueError("learning rates must be > 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got '{self.ablation}'")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be > 0 when set")
        object.__setattr__(self, "lr_grid", list(self.lr_grid))


def uses_mask(mask_config: MaskConfig, train_config: TrainConfig) -> bool:
    return mask_config.enabled and train_config.ablation in ("mask_only", "full")


def uses_adapter(adapter_config: AdapterConfig, train_config: TrainConfig) -> bool:
    return adapter_config.enabled and train_config.ablation in ("adapter_only", "full")


# ===============================================================
# MODEL BUNDLE
# ===============================================================
class ModelBundle:
    """Embedding tables, base model and (optionally) one adapter per side."""

    def __init__(
        self,
        schema: FeatureSchema,
        model_config: ModelConfig,
        adapter_config: AdapterConfig,
        use_adapter: bool = True,
        user_count_columns: tuple[str, ...] = (),
        item_count_columns: tuple[str, ...] = (),
    ):
        self.schema = schema
        self.model_config = model_config
        self.adapter_config = adapter_config
        self.user_count_columns = tuple(user_count_columns)
        self.item_count_columns = tuple(item_count_columns)
        self.tables = EmbeddingTables(schema)
        self.model: BaseModel = build_model(model_config, schema)
        self.adapters: dict[str, StateAdapter] = {}
        if use_adapter and adapter_config.enabled:
            for side in self.sides:
                n_out = len(self.side_indices(side))
                if adapter_config.source == "state":
                    width = signal_width(schema, self.user_count_columns, self.item_count_columns, adapter_config, side)
                else:
                    width = n_out * schema.dim
                self.adapters[side] = StateAdapter(width, n_out, adapter_config, prefix=f"adapter/{side}")
        self.ready = False

    @property
    def sides(self) -> tuple[str, ...]:
        return ("user", "item") if isinstance(self.model, TwoTowerModel) else ("all",)

    def side_indices(self, side: str) -> list[int]:
        if side == "all":
            return list(range(self.schema.n))
        model = self.model
        return model.user_indices if side == "user" else model.item_indices

    def parameter_groups(self) -> dict[str, list[Parameter]]:
        return {
            "tables": list(self.tables.tables),
            "masks": list(self.tables.masks),
            "model": self.model.parameters(),
            "adapter": [p for a in self.adapters.values() for p in a.parameters()],
        }

    def parameters(self) -> list[Parameter]:
        return [p for group in self.parameter_groups().values() for p in group]

    def initialize(self, seed: int) -> "ModelBundle":
        self.tables.initialize(rng_stream(seed, INIT_STREAM, 0))
        self.model.initialize(rng_stream(seed, INIT_STREAM, 1))
        for j, side in enumerate(sorted(self.adapters)):
            self.adapters[side].initialize(rng_stream(seed, INIT_STREAM, 2, j))
        self.ready = True
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        if set(params) != set(state):
            missing, extra = sorted(set(params) - set(state)), sorted(set(state) - set(params))
            raise ValueError(f"❌ Checkpoint does not match the model: missing={missing[:5]} unexpected={extra[:5]}")
        for name, value in state.items():
            params[name].assign(value)
        self.ready = True

    def meta(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "model": asdict(self.model_config),
            "adapter": {**asdict(self.adapter_config), "active_edges": list(self.adapter_config.active_edges)},
            "use_adapter": bool(self.adapters),
            "user_count_columns": list(self.user_count_columns),
            "item_count_columns": list(self.item_count_columns),
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "ModelBundle":
        return cls(
            FeatureSchema.from_dict(meta["schema"]),
            ModelConfig(**meta["model"]),
            AdapterConfig(**meta["adapter"]),
            use_adapter=meta["use_adapter"],
            user_count_columns=tuple(meta["user_count_columns"]),
            item_count_columns=tuple(meta["item_count_columns"]),
        )


def save_checkpoint(bundle: ModelBundle, path: str | Path, extra_meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump({"meta": {**bundle.meta(), **(extra_meta or {})}, "params": bundle.state_dict()}, path)
    logger.info("💾 Saved checkpoint → %s", path)
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelBundle, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"❌ Checkpoint not found: {path}")
    payload = joblib.load(path)
    bundle = ModelBundle.from_meta(payload["meta"])
    bundle.load_state_dict(payload["params"])
    return bundle, payload["meta"]


# ===============================================================
# OPTIMIZER
# ===============================================================
@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(
    params: list[Parameter],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """In-place bias-corrected Adam step using each parameter's accumulated gradient."""
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for p in params:
        g = p.grad
        if g.shape != p.shape:
            raise ValueError(f"❌ Gradient shape {g.shape} does not match parameter '{p.name}' {p.shape}")
        m = state.m.setdefault(p.name, np.zeros_like(p.value))
        v = state.v.setdefault(p.name, np.zeros_like(p.value))
        if m.shape != p.shape:
            raise ValueError(f"❌ Optimizer state for '{p.name}' has shape {m.shape}, parameter has {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        adam_update(self.params, self.state, self.lr, self.beta1, self.beta2, self.eps)


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if norm > max_norm:
        for p in params:
            p.grad *= max_norm / norm
    return norm


# ===============================================================
# FORWARD PASSES
# ===============================================================
@dataclass
class ForwardOutput:
    logits: Tensor
    embeddings: EmbeddingSet
    weights: dict[str, AdaptiveWeights]


def adaptive_weights(
    tape: ComputeTape,
    bundle: ModelBundle,
    embedding_set: EmbeddingSet,
    batch: FeatureBatch,
    stats: StateStats,
) -> dict[str, AdaptiveWeights]:
    weights = {}
    for side, adapter in bundle.adapters.items():
        if bundle.adapter_config.source == "self":
            weights[side] = self_weight_baseline(tape, embedding_set.select(bundle.side_indices(side)), adapter)
        else:
            signals = build_state_signals(tape, bundle.schema, embedding_set, batch, stats, bundle.adapter_config, side)
            weights[side] = adapter.forward(tape, signals.tensor(tape))
    return weights


def weighted_embeddings(
    tape: ComputeTape, bundle: ModelBundle, embedding_set: EmbeddingSet, weights: dict[str, AdaptiveWeights]
) -> EmbeddingSet:
    out = embedding_set
    for side, w in weights.items():
        idx = bundle.side_indices(side)
        out = out.replace(idx, apply_weights(tape, w, embedding_set.select(idx)).vectors)
    return out


def adaptive_forward(
    tape: ComputeTape,
    bundle: ModelBundle,
    batch: FeatureBatch,
    stats: StateStats,
    embedding_set: EmbeddingSet | None = None,
) -> ForwardOutput:
    """ŷ_adapt logits: g over adaptively weighted embeddings (plain g without adapters)."""
    es = embedding_set if embedding_set is not None else lookup(tape, bundle.schema, bundle.tables, batch)
    weights = adaptive_weights(tape, bundle, es, batch, stats)
    logits = bundle.model.logits(tape, weighted_embeddings(tape, bundle, es, weights))
    return ForwardOutput(logits, es, weights)


@dataclass(frozen=True)
class LossBreakdown:
    main: float
    aux: float
    total: float


@dataclass
class StepTrace:
    aux_weight_reads: int
    main_weight_reads: int
    forward_calls: int
    y_adapt: np.ndarray
    masked_flags: list[np.ndarray]


@dataclass
class StepResult:
    losses: LossBreakdown
    trace: StepTrace


def compute_losses(
    tape: ComputeTape,
    bundle: ModelBundle,
    batch: FeatureBatch,
    stats: StateStats,
    mask_config: MaskConfig,
    train_config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[Tensor, Tensor, Tensor, StepTrace]:
    """Steps 1–5 on the tape; returns (main, aux, total, trace)."""
    calls_before = bundle.model.forward_calls
    es = lookup(tape, bundle.schema, bundle.tables, batch)

    # 1-2: masked forwards never see adaptive weights
    reads_before = AdaptiveWeights.total_reads
    k = mask_config.k if uses_mask(mask_config, train_config) else 0
    masked_logits, flags = [], []
    if k:
        augmented = augment(tape, es, bundle.tables, mask_config, rng)
        masked_logits = [bundle.model.logits(tape, variant) for variant in augmented.variants]
        flags = [variant.masked for variant in augmented.variants]
    aux = auxiliary_loss(tape, masked_logits, batch.labels, k)
    aux_reads = AdaptiveWeights.total_reads - reads_before

    # 3-5
    reads_before = AdaptiveWeights.total_reads
    out = adaptive_forward(tape, bundle, batch, stats, es)
    main = bce_with_logits(tape, out.logits, batch.labels)
    total = linear_combination(tape, [(1.0, main), (train_config.alpha, aux)])
    trace = StepTrace(
        aux_weight_reads=aux_reads,
        main_weight_reads=AdaptiveWeights.total_reads - reads_before,
        forward_calls=bundle.model.forward_calls - calls_before,
        y_adapt=stable_sigmoid(out.logits.value).reshape(-1),
        masked_flags=flags,
    )
    return main, aux, total, trace


def train_step(
    bundle: ModelBundle,
    batch: FeatureBatch,
    stats: StateStats,
    optimizer: Adam,
    mask_config: MaskConfig,
    train_config: TrainConfig,
    rng: np.random.Generator,
) -> StepResult:
    if len(batch) == 0:
        raise ValueError("❌ train_step needs a non-empty batch")
    tape = ComputeTape(debug=train_config.debug)
    main, aux, total, trace = compute_losses(tape, bundle, batch, stats, mask_config, train_config, rng)
    if not np.isfinite(total.value):
        culprit = tape.first_non_finite() or "the loss itself"
        raise FloatingPointError(f"❌ Non-finite loss; first non-finite tensor: {culprit}")
    params = bundle.parameters()
    zero_grad(params)
    tape.backward(total)
    if train_config.grad_clip is not None:
        clip_grad_norm(params, train_config.grad_clip)
    optimizer.step()
    return StepResult(LossBreakdown(float(main.value), float(aux.value), float(total.value)), trace)


def check_gradients(
    bundle: ModelBundle,
    batch: FeatureBatch,
    stats: StateStats,
    mask_config: MaskConfig,
    train_config: TrainConfig,
    eps: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
    perturb_analytic=None,
) -> GradCheckReport:
    """Finite-difference check of the full training objective; the mask draw is replayed identically."""

    def objective(tape: ComputeTape) -> Tensor:
        return compute_losses(tape, bundle, batch, stats, mask_config, train_config, rng_stream(seed, MASK_STREAM))[2]

    return finite_difference_check(objective, bundle.parameters(), eps, max_coords, seed, perturb_analytic)


# ===============================================================
# SERVING
# ===============================================================
def serve_predict(bundle: ModelBundle, batch: FeatureBatch, stats: StateStats) -> np.ndarray:
    """Exactly one adaptive forward of g: no masking, no auxiliary work."""
    if not bundle.ready:
        raise RuntimeError("❌ Model parameters are not initialized or loaded")
    before = bundle.model.forward_calls
    out = adaptive_forward(ComputeTape(), bundle, batch, stats)
    if bundle.model.forward_calls - before != 1:
        raise RuntimeError("❌ Serving must run exactly one forward pass")
    return stable_sigmoid(out.logits.value).reshape(-1)


def predict_in_chunks(bundle: ModelBundle, batch: FeatureBatch, stats: StateStats, chunk: int = 4096) -> np.ndarray:
    if len(batch) == 0:
        return np.zeros(0)
    return np.concatenate(
        [serve_predict(bundle, batch.take(np.arange(s, min(s + chunk, len(batch)))), stats) for s in range(0, len(batch), chunk)]
    )


class ItemVectorCache:
    """Precomputed item-tower outputs for two-tower serving."""

    def __init__(self, bundle: ModelBundle, items: FeatureBatch, stats: StateStats):
        if not isinstance(bundle.model, TwoTowerModel):
            raise ValueError("❌ Item caching needs a two-tower model")
        self.bundle = bundle
        keys, first = np.unique(items.item_keys, return_index=True)
        rows = items.take(first)
        tape = ComputeTape()
        es = lookup(tape, bundle.schema, bundle.tables, rows)
        item_idx = bundle.model.item_indices
        item_set = es.select(item_idx)
        if "item" in bundle.adapters:
            w = adaptive_weights(tape, _side_only(bundle, "item"), es, rows, stats)["item"]
            item_set = apply_weights(tape, w, item_set)
        self.vectors = bundle.model.item_vectors(tape, item_set).value
        self.index = {key: row for row, key in enumerate(keys.tolist())}

    def serve(self, batch: FeatureBatch, stats: StateStats) -> np.ndarray:
        bundle = self.bundle
        tape = ComputeTape()
        es = lookup(tape, bundle.schema, bundle.tables, batch)
        user_set = es.select(bundle.model.user_indices)
        if "user" in bundle.adapters:
            w = adaptive_weights(tape, _side_only(bundle, "user"), es, batch, stats)["user"]
            user_set = apply_weights(tape, w, user_set)
        user_vec = bundle.model.user_vectors(tape, user_set)
        item_vec = constant(self.vectors[[self.index[k] for k in batch.item_keys.tolist()]])
        return stable_sigmoid(bundle.model.score(tape, user_vec, item_vec).value).reshape(-1)


def _side_only(bundle: ModelBundle, side: str) -> ModelBundle:
    """Shallow view of the bundle that runs a single side's adapter."""
    view = object.__new__(ModelBundle)
    view.__dict__.update(bundle.__dict__)
    view.adapters = {side: bundle.adapters[side]}
    return view


# ===============================================================
# FIT
# ===============================================================
@dataclass
class FitResult:
    best_epoch: int
    best_val_auc: float | None
    history: pd.DataFrame


def fit(
    bundle: ModelBundle,
    train: FeatureBatch,
    val: FeatureBatch,
    stats: StateStats,
    mask_config: MaskConfig,
    config: TrainConfig,
    seed: int,
    log_path: str | Path | None = None,
    progress: bool = True,
) -> FitResult:
    """Seeded epoch loop; keeps the parameters of the epoch with the best validation AUC."""
    if len(train) == 0:
        raise ValueError("❌ Training set is empty")
    if not bundle.ready:
        bundle.initialize(seed)
    optimizer = Adam(bundle.parameters(), config.lr, config.beta1, config.beta2, config.adam_eps)
    log_fh = open(log_path, "w") if log_path is not None else None
    rows, best_auc, best_epoch, best_state, global_step = [], None, config.epochs, None, 0
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng_stream(seed, SHUFFLE_STREAM, epoch).permutation(len(train))
            sums = np.zeros(3)
            starts = range(0, len(train), config.batch_size)
            bar = tqdm(starts, desc=f"Epoch {epoch}", disable=not progress, leave=False)
            for step, start in enumerate(bar):
                batch = train.take(order[start : start + config.batch_size])
                rng = rng_stream(seed, MASK_STREAM, mask_config.seed, epoch, step)
                losses = train_step(bundle, batch, stats, optimizer, mask_config, config, rng).losses
                sums += (losses.main, losses.aux, losses.total)
                global_step += 1
                if log_fh and global_step % config.log_every == 0:
                    _log_record(log_fh, epoch, global_step, losses.main, losses.aux, losses.total, None)
                bar.set_postfix(loss=f"{losses.total:.4f}")
            means = sums / len(starts)
            val_auc = auc(predict_in_chunks(bundle, val, stats, config.eval_batch_size), val.labels) if len(val) else None
            if log_fh:
                _log_record(log_fh, epoch, global_step, *means, val_auc)
            rows.append({"epoch": epoch, "main": means[0], "aux": means[1], "total": means[2], "val_auc": val_auc})
            shown = "undefined" if val_auc is None else f"{val_auc:.4f}"
            logger.info("📈 Epoch %d: main=%.4f aux=%.4f total=%.4f val_auc=%s", epoch, *means, shown)
            if val_auc is not None and (best_auc is None or val_auc > best_auc):
                best_auc, best_epoch, best_state = val_auc, epoch, bundle.state_dict()
    finally:
        if log_fh:
            log_fh.close()
    if best_state is not None:
        bundle.load_state_dict(best_state)
    logger.info("✅ Selected epoch %d (val AUC %s)", best_epoch, best_auc)
    return FitResult(best_epoch, best_auc, pd.DataFrame(rows))


def _log_record(fh, epoch, step, main, aux, total, val_auc) -> None:
    record = {"epoch": epoch, "step": step, "main": float(main), "aux": float(aux), "total": float(total), "val_auc": val_auc}
    fh.write(json.dumps(record) + "\n")
