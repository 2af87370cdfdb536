"""
synthetic_generate.py
-----------------------
Seeded long-tail click data with a known click model.

- user activity and item exposure follow Zipf laws over shuffled ranks
- P(click) = (1 - noise) · sigmoid(scale · ⟨z_u, z_i⟩ + b_u + b_i + b0) + noise / 2
- meta features are quantised noisy projections of the latent factors,
  as informative as `informativeness` allows (0 → pure noise)
- a cold segment of tail users/items never appears in training

Output (CLI `gen-synth`):
    <out>/synthetic_{train,val,test}.csv|parquet
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import norm

from utils.embedding import ITEM_COL, LABEL_COL, TIME_COL, USER_COL, FeatureSchema, FeatureSpec
from utils.training import rng_stream

from .dataset import Dataset, join_sequence, split_sizes
from .stats_build import SECONDS_PER_DAY, StatsStore, build_stats

logger = logging.getLogger(__name__)

SYNTH_STREAM = 3
START_TIME = 1_600_000_000  # arbitrary epoch origin


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 10_000
    n_items: int = 5_000
    n_samples: int = 200_000
    user_exponent: float = 1.2
    item_exponent: float = 1.1
    latent_dim: int = 8
    n_meta: int = 2               # per side
    meta_vocab: int = 8
    informativeness: float = 0.7
    noise: float = 0.1
    cold_fraction: float = 0.05
    n_authors: int = 500
    history_len: int = 3
    days: int = 60
    scale: float = 2.5
    seed: int = 0

    def __post_init__(self):
        errors = []
        if self.user_exponent <= 0 or self.item_exponent <= 0:
            errors.append("Zipf exponents must be > 0")
        if not 0.0 <= self.informativeness <= 1.0:
            errors.append("informativeness must lie in [0, 1]")
        if not 0.0 <= self.noise <= 1.0:
            errors.append("noise must lie in [0, 1]")
        if not 0.0 <= self.cold_fraction < 0.5:
            errors.append("cold_fraction must lie in [0, 0.5)")
        if min(self.n_users, self.n_items, self.n_samples, self.latent_dim, self.meta_vocab, self.n_authors, self.days) < 1:
            errors.append("sizes must be ≥ 1")
        if self.n_meta < 0 or self.history_len < 1:
            errors.append("n_meta must be ≥ 0 and history_len ≥ 1")
        if errors:
            raise ValueError("❌ Invalid SynthConfig: " + "; ".join(errors))


@dataclass
class GroundTruth:
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    offset: float
    scale: float
    noise: float

    def p_click(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        users, items = np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64)
        logit = (
            self.scale * np.einsum("bd,bd->b", self.user_factors[users], self.item_factors[items])
            + self.user_bias[users]
            + self.item_bias[items]
            + self.offset
        )
        return (1.0 - self.noise) * expit(logit) + self.noise / 2.0


@dataclass
class SyntheticData:
    train: Dataset
    val: Dataset
    test: Dataset
    stats: StatsStore
    truth: GroundTruth
    config: SynthConfig


# ---------------------------------------------------------------------
# SCHEMA
# ---------------------------------------------------------------------
def synthetic_schema(config: SynthConfig, dim: int = 16) -> FeatureSchema:
    meta_vocab = config.meta_vocab + 1
    feats = [FeatureSpec("user_id", "user", "id_based", config.n_users + 1, state_id=True)]
    feats += [FeatureSpec(f"user_meta_{j}", "user", "meta", meta_vocab) for j in range(config.n_meta)]
    feats.append(FeatureSpec("user_history", "user", "id_based", config.n_items + 1, is_sequence=True, max_len=config.history_len))
    feats.append(FeatureSpec("hour", "context", "meta", 25))
    feats.append(FeatureSpec("item_id", "item", "id_based", config.n_items + 1, state_id=True))
    feats.append(FeatureSpec("author_id", "item", "id_based", config.n_authors + 1, state_id=True))
    feats += [FeatureSpec(f"item_meta_{j}", "item", "meta", meta_vocab) for j in range(config.n_meta)]
    return FeatureSchema(tuple(feats), dim)


# ---------------------------------------------------------------------
# HELPERS
# ---------------------------------------------------------------------
def zipf_weights(n: int, exponent: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sampling weights ∝ rank^-exponent over a random permutation; returns (weights, ranks)."""
    ranks = rng.permutation(n)
    weights = (ranks + 1.0) ** -exponent
    return weights / weights.sum(), ranks


def quantise(signal: np.ndarray, informativeness: float, vocab: int, rng: np.random.Generator) -> np.ndarray:
    """Standardise, mix with noise, cut at normal quantiles into codes 1..vocab."""
    signal = (signal - signal.mean()) / (signal.std() + 1e-12)
    mixed = informativeness * signal + np.sqrt(1.0 - informativeness**2) * rng.standard_normal(len(signal))
    cuts = norm.ppf(np.arange(1, vocab) / vocab)
    return np.digitize(mixed, cuts) + 1


def meta_codes(factors: np.ndarray, bias: np.ndarray, config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Meta 0 tracks the bias, the rest track random projections of the latent factors."""
    cols = []
    for j in range(config.n_meta):
        signal = bias if j == 0 else factors @ rng.standard_normal(factors.shape[1])
        cols.append(quantise(signal, config.informativeness, config.meta_vocab, rng))
    return np.stack(cols, axis=1) if cols else np.zeros((len(bias), 0), dtype=np.int64)


def tail_subset(ranks: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Random `fraction` of all entities, drawn from the less popular half."""
    n_cold = int(round(fraction * len(ranks)))
    tail = np.flatnonzero(ranks >= len(ranks) // 2)
    return np.sort(rng.choice(tail, size=min(n_cold, len(tail)), replace=False))


def history_strings(frame: pd.DataFrame, history_len: int) -> list[str]:
    """Previous items of the same user, oldest first."""
    grouped = frame.groupby(USER_COL)["item_id"]
    shifted = [grouped.shift(s) for s in range(history_len, 0, -1)]
    stacked = np.stack([s.to_numpy(dtype=np.float64) for s in shifted], axis=1)
    return [join_sequence(row[~np.isnan(row)]) for row in stacked]


# ---------------------------------------------------------------------
# MAIN
# ---------------------------------------------------------------------
def generate_synthetic(config: SynthConfig, dim: int = 16, temporal_stats: bool = False) -> SyntheticData:
    rng = rng_stream(config.seed, SYNTH_STREAM)
    logger.info("🎲 Generating synthetic data: %s", asdict(config))

    # --- latent click model ---
    L = config.latent_dim
    truth = GroundTruth(
        user_factors=rng.standard_normal((config.n_users, L)) / L**0.25,
        item_factors=rng.standard_normal((config.n_items, L)) / L**0.25,
        user_bias=rng.normal(0.0, 0.5, config.n_users),
        item_bias=rng.normal(0.0, 0.5, config.n_items),
        offset=-0.5,
        scale=config.scale,
        noise=config.noise,
    )
    user_meta = meta_codes(truth.user_factors, truth.user_bias, config, rng)
    item_meta = meta_codes(truth.item_factors, truth.item_bias, config, rng)
    item_author = rng.integers(0, config.n_authors, config.n_items)

    # --- long-tail sampling ---
    user_w, user_ranks = zipf_weights(config.n_users, config.user_exponent, rng)
    item_w, item_ranks = zipf_weights(config.n_items, config.item_exponent, rng)
    users = rng.choice(config.n_users, size=config.n_samples, p=user_w)
    items = rng.choice(config.n_items, size=config.n_samples, p=item_w)
    p = truth.p_click(users, items)
    labels = (rng.random(config.n_samples) < p).astype(np.int64)
    timestamps = START_TIME + rng.integers(0, config.days * SECONDS_PER_DAY, config.n_samples)

    cold_users = tail_subset(user_ranks, config.cold_fraction, rng)
    cold_items = tail_subset(item_ranks, config.cold_fraction, rng)
    cold = np.isin(users, cold_users) | np.isin(items, cold_items)

    frame = pd.DataFrame({USER_COL: users, ITEM_COL: items, "user_id": users + 1, "item_id": items + 1})
    for j in range(config.n_meta):
        frame[f"user_meta_{j}"] = user_meta[users, j]
        frame[f"item_meta_{j}"] = item_meta[items, j]
    frame["author_id"] = item_author[items] + 1
    frame["hour"] = ((timestamps % SECONDS_PER_DAY) // 3600) + 1
    frame[TIME_COL] = timestamps
    frame[LABEL_COL] = labels
    frame["like"] = labels
    frame["comment"] = labels * (rng.random(config.n_samples) < 0.2)
    frame["cold"] = cold
    frame["p_click"] = p

    frame = frame.sort_values([TIME_COL, USER_COL], kind="stable").reset_index(drop=True)
    frame["user_history"] = history_strings(frame, config.history_len)

    # --- splits: warm 6:2:2, cold halves into val/test ---
    warm_idx = np.flatnonzero(~frame["cold"].to_numpy())
    cold_idx = rng.permutation(np.flatnonzero(frame["cold"].to_numpy()))
    warm_idx = rng.permutation(warm_idx)
    n_train, n_val, _ = split_sizes(len(warm_idx), (0.6, 0.2, 0.2))
    half = len(cold_idx) // 2
    parts = {
        "train": warm_idx[:n_train],
        "val": np.concatenate([warm_idx[n_train : n_train + n_val], cold_idx[:half]]),
        "test": np.concatenate([warm_idx[n_train + n_val :], cold_idx[half:]]),
    }

    schema = synthetic_schema(config, dim)
    cols = schema.names + [LABEL_COL, USER_COL, ITEM_COL, TIME_COL, "like", "comment", "cold", "p_click"]
    splits = {
        name: Dataset(frame.iloc[np.sort(idx)][cols].reset_index(drop=True), schema, name, f"synthetic_{name}")
        for name, idx in parts.items()
    }
    stats = build_stats(splits["train"], temporal=temporal_stats)
    logger.info(
        "✅ Synthetic: %s samples | %s cold | train/val/test %s",
        f"{len(frame):,}", f"{int(cold.sum()):,}", " / ".join(f"{len(d):,}" for d in splits.values()),
    )
    return SyntheticData(splits["train"], splits["val"], splits["test"], stats, truth, config)


def save_synthetic(data: SyntheticData, out_dir: str | Path, fmt: str = "csv") -> list[Path]:
    if fmt not in ("csv", "parquet"):
        raise ValueError(f"❌ Unknown format '{fmt}' (csv or parquet)")
    out_dir = Path(out_dir)
    return [d.save(out_dir / f"{d.name}.{fmt}") for d in (data.train, data.val, data.test)]
