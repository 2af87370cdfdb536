import numpy as np
import pandas as pd
import pytest

from adafm.dataset import Dataset
from adafm.stats_build import SECONDS_PER_DAY, build_stats
from utils.embedding import FeatureSchema, FeatureSpec

SCHEMA = FeatureSchema((FeatureSpec("user_id", "user", "id_based", 10, state_id=True),), dim=2)
DAY0 = 1_000 * SECONDS_PER_DAY


def train_frame():
    # user 1: days 0, 1, 1, 5, 9 ; user 2: day 9 ; user 3: day 2
    days = [0, 1, 1, 5, 9, 9, 2]
    return pd.DataFrame(
        {
            "user_id": [1, 1, 1, 1, 1, 2, 3],
            "label": [1, 0, 1, 0, 1, 1, 0],
            "like": [1, 0, 1, 0, 1, 1, 0],
            "comment": [1, 0, 0, 0, 0, 1, 0],
            "user": [1, 1, 1, 1, 1, 2, 3],
            "item": [10, 10, 11, 12, 10, 11, 12],
            "timestamp": [DAY0 + d * SECONDS_PER_DAY + 60 for d in days],
        }
    )


def test_counts_match_groupby():
    stats = build_stats(Dataset(train_frame(), SCHEMA, "train"))
    frame = train_frame()
    np.testing.assert_array_equal(stats.user_counts(np.array([1, 2, 3]))[:, 0], frame.groupby("user").size().to_numpy())
    np.testing.assert_array_equal(stats.item_counts(np.array([10, 11, 12])), [[3, 2, 1], [2, 2, 1], [2, 0, 0]])
    assert stats.item_count_columns == ("impressions", "like", "comment")
    np.testing.assert_array_equal(stats.item_counts(np.array([99])), [[0, 0, 0]])


def test_static_active_days_relative_to_split_end():
    stats = build_stats(Dataset(train_frame(), SCHEMA, "train"))
    active = stats.user_active(np.array([1, 2, 3, 42]))
    # last day is 9: 7-day window covers days 3..9, 30-day window everything
    np.testing.assert_array_equal(active[:3], [[2, 4], [1, 1], [0, 1]])
    assert np.isnan(active[3]).all()


def test_temporal_active_days_use_only_earlier_days():
    stats = build_stats(Dataset(train_frame(), SCHEMA, "train"), temporal=True)
    ts = np.array([DAY0 + 6 * SECONDS_PER_DAY, DAY0 + 1 * SECONDS_PER_DAY, DAY0])
    active = stats.user_active(np.array([1, 1, 3]), ts)
    np.testing.assert_array_equal(active, [[3, 3], [1, 1], [0, 0]])


def test_stats_reject_other_splits_and_warn_without_timestamps(caplog):
    with pytest.raises(ValueError):
        build_stats(Dataset(train_frame(), SCHEMA, "test"))
    no_time = Dataset(train_frame().drop(columns=["timestamp"]), SCHEMA, "train")
    with caplog.at_level("WARNING"):
        stats = build_stats(no_time)
    assert "no timestamps" in caplog.text
    assert np.isnan(stats.user_active(np.array([1]))).all()
    assert stats.user_counts(np.array([1]))[0, 0] == 5


def test_bucket_stats_follow_count_columns():
    stats = build_stats(Dataset(train_frame(), SCHEMA, "train"))
    np.testing.assert_array_equal(stats.user_stat(np.array([1, 3, 42])), [5, 1, 0])
    np.testing.assert_array_equal(stats.item_stat(np.array([10, 77])), [3, 0])
