import numpy as np
import pandas as pd
import pytest

from adafm.dataset import Dataset, split_random, split_sizes
from utils.embedding import FeatureSchema, FeatureSpec

SCHEMA = FeatureSchema(
    (
        FeatureSpec("user_id", "user", "id_based", 50, state_id=True),
        FeatureSpec("tags", "item", "id_based", 9, is_sequence=True, max_len=3),
    ),
    dim=2,
)


def make(n=10, labels=None):
    return Dataset(
        pd.DataFrame(
            {
                "user_id": np.arange(n) % 7 + 1,
                "tags": ["1|2" if i % 2 else "" for i in range(n)],
                "label": labels if labels is not None else np.arange(n) % 2,
                "user": np.arange(n) % 7,
                "item": np.arange(n),
            }
        ),
        SCHEMA,
    )


def test_labels_must_be_binary():
    with pytest.raises(ValueError):
        make(3, labels=[0, 1, 2])
    with pytest.raises(KeyError):
        Dataset(make().frame.drop(columns=["tags"]), SCHEMA)


def test_split_sizes_six_two_two():
    assert split_sizes(10, (0.6, 0.2, 0.2)) == (6, 2, 2)
    for n in (7, 11, 1001):
        sizes = split_sizes(n, (0.6, 0.2, 0.2))
        assert sum(sizes) == n
        for size, r in zip(sizes, (0.6, 0.2, 0.2)):
            assert abs(size - r * n) <= 1


@pytest.mark.parametrize("ratios", [(0.5, 0.2, 0.2), (0.0, 0.5, 0.5), (1.2, -0.1, -0.1), (1.0,)])
def test_degenerate_ratios(ratios):
    with pytest.raises(ValueError):
        split_sizes(10, ratios)


def test_split_random_is_a_seeded_partition():
    data = make(50)
    a = split_random(data, seed=4)
    b = split_random(data, seed=4)
    c = split_random(data, seed=5)
    assert [p.split for p in a] == ["train", "val", "test"]
    for pa, pb in zip(a, b):
        pd.testing.assert_frame_equal(pa.frame, pb.frame)
    assert not a[0].frame.equals(c[0].frame)
    items = np.concatenate([p.frame["item"].to_numpy() for p in a])
    assert sorted(items) == list(range(50))


@pytest.mark.parametrize("suffix", [".csv", ".parquet"])
def test_columnar_round_trip_keeps_sequences(tmp_path, suffix):
    data = make(6)
    path = data.save(tmp_path / f"d{suffix}")
    back = Dataset.load(path, SCHEMA)
    np.testing.assert_array_equal(back.encode().values["tags"], data.encode().values["tags"])
    np.testing.assert_array_equal(back.encode().lengths["tags"], [0, 2, 0, 2, 0, 2])


def test_split_random_needs_exactly_three_parts():
    data = make(173)
    with pytest.raises(ValueError):
        split_random(data, (0.4, 0.2, 0.2, 0.2))
    parts = split_random(data, (0.5, 0.25, 0.25))
    assert sum(len(p) for p in parts) == 173
