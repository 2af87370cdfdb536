"""
stats_build.py
-----------------
Per-user and per-item statistics from the training split only; they feed
the adapter's r_active and r_count signals and the state buckets of the
evaluation reports.

User columns : events (+ like, comment when present)
Item columns : impressions (+ like, comment when present)
Active days  : distinct days with an event in the trailing 7/30-day windows,
               either as of the last training day (static) or as of each
               sample's own day using only earlier events (temporal).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from utils.adapter import ACTIVE_WINDOWS
from utils.embedding import ITEM_COL, TIME_COL, USER_COL

from .dataset import Dataset

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400
INTERACTION_COLUMNS = ("like", "comment")


@dataclass
class StatsStore:
    users: pd.DataFrame                 # index: user key
    items: pd.DataFrame                 # index: item key
    user_count_columns: tuple[str, ...]
    item_count_columns: tuple[str, ...]
    temporal: bool = False
    has_time: bool = True
    windows: tuple[int, ...] = ACTIVE_WINDOWS
    end_day: int = 0
    _day_keys: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)
    _user_codes: dict = field(default_factory=dict, repr=False)

    # --- StateStats protocol ---
    def user_active(self, user_keys: np.ndarray, timestamps: np.ndarray | None = None) -> np.ndarray:
        keys = np.asarray(user_keys)
        out = np.full((len(keys), len(self.windows)), np.nan)
        if not self.has_time:
            return out
        if not self.temporal or timestamps is None:
            cols = [f"active_{w}" for w in self.windows]
            known = self.users.reindex(keys)[cols].to_numpy(dtype=np.float64)
            return known
        codes = np.array([self._user_codes.get(k, -1) for k in keys.tolist()], dtype=np.int64)
        known = codes >= 0
        days = (np.asarray(timestamps, dtype=np.float64) // SECONDS_PER_DAY).astype(np.int64)
        base = codes * _DAY_SPAN
        hi = np.searchsorted(self._day_keys, base + days, side="left")
        for j, w in enumerate(self.windows):
            lo = np.searchsorted(self._day_keys, base + days - w, side="left")
            out[known, j] = (hi - lo)[known]
        return out

    def user_counts(self, user_keys: np.ndarray) -> np.ndarray:
        return self.users.reindex(np.asarray(user_keys))[list(self.user_count_columns)].fillna(0).to_numpy(dtype=np.float64)

    def item_counts(self, item_keys: np.ndarray) -> np.ndarray:
        return self.items.reindex(np.asarray(item_keys))[list(self.item_count_columns)].fillna(0).to_numpy(dtype=np.float64)

    # --- bucket inputs ---
    def user_stat(self, user_keys: np.ndarray, column: str = "events") -> np.ndarray:
        return self.users.reindex(np.asarray(user_keys))[column].fillna(0).to_numpy(dtype=np.float64)

    def item_stat(self, item_keys: np.ndarray, column: str = "impressions") -> np.ndarray:
        return self.items.reindex(np.asarray(item_keys))[column].fillna(0).to_numpy(dtype=np.float64)


# day keys pack (user code, day) into one sortable integer
_DAY_SPAN = 1 << 32


def build_stats(train: Dataset, temporal: bool = False) -> StatsStore:
    """Aggregate the training split; any other split is rejected to avoid leakage."""
    if train.split != "train":
        raise ValueError(f"❌ Statistics must come from the training split, got '{train.split}'")
    frame = train.frame
    present = [c for c in INTERACTION_COLUMNS if c in frame.columns]

    users = frame.groupby(USER_COL).size().rename("events").to_frame()
    items = frame.groupby(ITEM_COL).size().rename("impressions").to_frame()
    for col in present:
        users[col] = frame.groupby(USER_COL)[col].sum()
        items[col] = frame.groupby(ITEM_COL)[col].sum()

    store_kwargs = {}
    has_time = train.has_timestamps
    if has_time:
        days = (frame[TIME_COL].to_numpy(dtype=np.float64) // SECONDS_PER_DAY).astype(np.int64)
        user_days = pd.DataFrame({USER_COL: frame[USER_COL].to_numpy(), "day": days}).drop_duplicates()
        end_day = int(days.max())
        for w in ACTIVE_WINDOWS:
            recent = user_days[user_days["day"] > end_day - w]
            users[f"active_{w}"] = recent.groupby(USER_COL).size().reindex(users.index).fillna(0)
        codes = {k: j for j, k in enumerate(users.index.tolist())}
        packed = user_days[USER_COL].map(codes).to_numpy(dtype=np.int64) * _DAY_SPAN + user_days["day"].to_numpy()
        store_kwargs = {"end_day": end_day, "_day_keys": np.sort(packed), "_user_codes": codes}
    else:
        logger.warning("⚠️ %s has no timestamps → active-day signals disabled, using static total counts only", train.name)

    store = StatsStore(
        users=users,
        items=items,
        user_count_columns=("events", *present),
        item_count_columns=("impressions", *present),
        temporal=temporal and has_time,
        has_time=has_time,
        **store_kwargs,
    )
    logger.info("✅ Stats: %s users, %s items (%s)", f"{len(users):,}", f"{len(items):,}", "temporal" if store.temporal else "static")
    return store
