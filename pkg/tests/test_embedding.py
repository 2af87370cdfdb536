import numpy as np
import pandas as pd
import pytest

from utils.embedding import (
    EmbeddingSet,
    EmbeddingTables,
    FeatureSchema,
    FeatureSpec,
    encode_frame,
    encode_sequence,
    id_norm_features,
    lookup,
    mask_row,
)
from utils.tensor import ComputeTape, concat, constant, gather, weighted_sum


def schema():
    return FeatureSchema(
        (
            FeatureSpec("user_id", "user", "id_based", 5, state_id=True),
            FeatureSpec("age", "user", "meta", 3),
            FeatureSpec("history", "user", "id_based", 6, is_sequence=True, max_len=3),
            FeatureSpec("item_id", "item", "id_based", 4, state_id=True),
        ),
        dim=2,
    )


def frame():
    return pd.DataFrame(
        {
            "user_id": [1, 2, 9],
            "age": [0, 2, 1],
            "history": ["1|2", "", "3|4|5|1"],
            "item_id": [3, 1, 2],
            "label": [1, 0, 1],
            "user": [1, 2, 9],
            "item": [3, 1, 2],
        }
    )


def tables(seed=0):
    t = EmbeddingTables(schema())
    t.initialize(np.random.default_rng(seed))
    return t


def test_schema_rejects_duplicates_and_bad_state_ids():
    with pytest.raises(ValueError):
        FeatureSchema((FeatureSpec("a", "user", "meta", 2), FeatureSpec("a", "item", "meta", 2)))
    with pytest.raises(ValueError):
        FeatureSpec("genre", "item", "meta", 4, state_id=True)
    with pytest.raises(ValueError):
        FeatureSpec("x", "somewhere", "meta", 4)
    with pytest.raises(ValueError, match="sequence features must be id_based"):
        FeatureSpec("genres", "item", "meta", 20, is_sequence=True)


def test_schema_yaml_round_trip(tmp_path):
    path = tmp_path / "schema.yaml"
    schema().to_yaml(path)
    assert FeatureSchema.from_yaml(path) == schema()


def test_every_feature_has_its_own_mask_row():
    t = tables()
    rows = [mask_row(t, i) for i in range(4)]
    assert len({id(r) for r in rows}) == 4
    assert all(r.shape == (1, 2) for r in rows)
    assert len({r.name for r in rows}) == 4
    with pytest.raises(IndexError):
        mask_row(t, 4)


def test_encode_sequence_keeps_latest_elements_and_maps_oov():
    values, lengths = encode_sequence(["3|4|5|1", "", "7"], vocab=6, max_len=3)
    np.testing.assert_array_equal(values, [[4, 5, 1], [0, 0, 0], [0, 0, 0]])
    np.testing.assert_array_equal(lengths, [3, 0, 1])


def test_encode_frame_maps_out_of_vocabulary_ids_to_zero():
    batch = encode_frame(schema(), frame())
    np.testing.assert_array_equal(batch.values["user_id"], [1, 2, 0])
    assert len(batch) == 3
    with pytest.raises(KeyError):
        encode_frame(schema(), frame().drop(columns=["age"]))


def test_lookup_pools_sequences_and_masks_empty_ones():
    t = tables()
    batch = encode_frame(schema(), frame())
    es = lookup(ComputeTape(), schema(), t, batch)
    assert len(es) == 4 and es.batch_size == 3
    np.testing.assert_allclose(es.vectors[0].value[0], t.tables[0].value[1])
    np.testing.assert_allclose(es.vectors[2].value[0], t.tables[2].value[[1, 2]].mean(axis=0))
    np.testing.assert_allclose(es.vectors[2].value[1], t.masks[2].value[0])
    np.testing.assert_allclose(es.vectors[2].value[2], t.tables[2].value[[4, 5, 1]].mean(axis=0))
    np.testing.assert_array_equal(es.masked[:, 2], [False, True, False])


def test_lookup_rejects_wrong_feature_count():
    batch = encode_frame(schema(), frame())
    batch.values.pop("age")
    with pytest.raises(ValueError):
        lookup(ComputeTape(), schema(), tables(), batch)


def test_lookup_gradient_reaches_only_used_rows():
    t = tables()
    batch = encode_frame(schema(), frame())
    tape = ComputeTape()
    es = lookup(tape, schema(), t, batch)
    tape.backward(weighted_sum(tape, concat(tape, es.vectors), np.ones((3, 8))))
    used = {0, 1, 2}
    for row in range(5):
        assert (np.abs(t.tables[0].grad[row]).sum() > 0) == (row in used)
    np.testing.assert_allclose(t.masks[2].grad, np.ones((1, 2)))
    assert np.all(t.masks[0].grad == 0)


def test_id_norm_features_order_and_values():
    t = tables()
    batch = encode_frame(schema(), frame())
    tape = ComputeTape()
    es = lookup(tape, schema(), t, batch)
    feats = id_norm_features(tape, schema(), es).value
    assert feats.shape == (3, 8)
    n = np.linalg.norm(t.tables[3].value[3])
    np.testing.assert_allclose(feats[0, 4:], [n, np.log1p(n), np.sqrt(n), n**2], rtol=1e-12)
    empty = id_norm_features(tape, schema(), es, kinds=["context"])
    assert empty.shape == (3, 0)


def test_id_norm_features_ignore_rotations():
    t = tables()
    batch = encode_frame(schema(), frame())
    es = lookup(ComputeTape(), schema(), t, batch)
    q, _ = np.linalg.qr(np.random.default_rng(3).normal(size=(2, 2)))
    rotated = EmbeddingSet([constant(v.value @ q) for v in es.vectors], es.masked)
    np.testing.assert_allclose(
        id_norm_features(ComputeTape(), schema(), rotated).value,
        id_norm_features(ComputeTape(), schema(), es).value,
        rtol=1e-12,
        atol=1e-12,
    )


def test_single_element_sequence_equals_scalar_lookup():
    t = tables()
    batch = encode_frame(schema(), frame().assign(history=["4", "1", "5"]))
    es = lookup(ComputeTape(), schema(), t, batch)
    scalar = gather(ComputeTape(), t.tables[2], np.array([4, 1, 5]))
    np.testing.assert_array_equal(es.vectors[2].value, scalar.value)
    assert not es.masked[:, 2].any()
