from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from adafm.dataset import Dataset
from adafm.synthetic_generate import SynthConfig, generate_synthetic, save_synthetic
from utils.metrics import auc

from conftest import TINY

MODERATE = SynthConfig(n_users=2_000, n_items=600, n_samples=20_000, n_authors=50, days=30, seed=1)


@pytest.fixture(scope="module")
def moderate():
    return generate_synthetic(MODERATE, dim=4)


def test_same_seed_same_data(tiny_data):
    again = generate_synthetic(TINY, dim=3)
    for a, b in ((tiny_data.train, again.train), (tiny_data.val, again.val), (tiny_data.test, again.test)):
        pd.testing.assert_frame_equal(a.frame, b.frame)
    other = generate_synthetic(replace(TINY, seed=7), dim=3)
    assert not other.train.frame.equals(tiny_data.train.frame)


def test_user_activity_is_long_tailed(moderate):
    frame = pd.concat([moderate.train.frame, moderate.val.frame, moderate.test.frame])
    per_user = frame.groupby("user").size().sort_values(ascending=False)
    top = int(np.ceil(0.05 * MODERATE.n_users))
    assert per_user.iloc[:top].sum() / len(frame) >= 0.6


def test_cold_rows_never_reach_training(moderate):
    assert not moderate.train.frame["cold"].any()
    for split in (moderate.val, moderate.test):
        cold = split.frame[split.frame["cold"]]
        assert len(cold) > 0
        unseen_user = moderate.stats.user_stat(cold["user"].to_numpy()) == 0
        unseen_item = moderate.stats.item_stat(cold["item"].to_numpy()) == 0
        assert np.all(unseen_user | unseen_item)


def test_oracle_auc_is_high(moderate):
    test = moderate.test.frame
    p = moderate.truth.p_click(test["user"].to_numpy(), test["item"].to_numpy())
    np.testing.assert_allclose(p, test["p_click"].to_numpy())
    assert auc(p, test["label"].to_numpy()) >= 0.75
    noise = MODERATE.noise
    assert p.min() >= noise / 2 and p.max() <= 1 - noise / 2


@pytest.mark.parametrize("informativeness, low, high", [(0.0, 0.0, 0.15), (1.0, 0.8, 1.0)])
def test_meta_tracks_bias_as_informative_as_asked(informativeness, low, high):
    data = generate_synthetic(replace(MODERATE, n_samples=5_000, informativeness=informativeness), dim=4)
    users = data.train.frame.drop_duplicates("user")
    corr = np.corrcoef(users["user_meta_0"], data.truth.user_bias[users["user"].to_numpy()])[0, 1]
    assert low <= abs(corr) <= high


@pytest.mark.parametrize(
    "field, value",
    [("informativeness", 1.5), ("noise", -0.1), ("cold_fraction", 0.5), ("user_exponent", 0.0), ("n_users", 0)],
)
def test_invalid_config(field, value):
    with pytest.raises(ValueError):
        replace(TINY, **{field: value})


def test_history_is_bounded_and_starts_empty(tiny_data):
    frame = tiny_data.train.frame
    lengths = tiny_data.train.encode().lengths["user_history"]
    assert lengths.max() <= TINY.history_len
    first = frame.sort_values("timestamp").drop_duplicates("user")
    assert (first["user_history"] == "").sum() >= 1


@pytest.mark.parametrize("fmt", ["csv", "parquet"])
def test_save_and_reload(tmp_path, tiny_data, fmt):
    paths = save_synthetic(tiny_data, tmp_path, fmt)
    assert [p.name for p in paths] == [f"synthetic_{s}.{fmt}" for s in ("train", "val", "test")]
    back = Dataset.load(paths[0], tiny_data.train.schema, "train")
    assert len(back) == len(tiny_data.train)
    np.testing.assert_array_equal(back.frame["label"], tiny_data.train.frame["label"])
