import numpy as np
import pandas as pd
import pytest

from utils.embedding import EmbeddingTables, FeatureSchema, FeatureSpec, encode_frame, lookup
from utils.modeling import FMModel, ModelConfig, TwoTowerModel, build_model
from utils.tensor import ComputeTape


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(kind="dcn")
    with pytest.raises(ValueError):
        ModelConfig(hidden=[8, 2])


@pytest.mark.parametrize("kind", ["mlp", "fm", "two_tower"])
def test_models_emit_one_logit_per_sample(kind, tiny_batch, make_bundle):
    bundle = make_bundle(kind, use_adapter=False)
    tape = ComputeTape()
    es = lookup(tape, bundle.schema, bundle.tables, tiny_batch)
    logits = bundle.model.logits(tape, es)
    assert logits.shape == (len(tiny_batch), 1)
    probs = bundle.model.predict(tape, es).value
    assert np.all((probs > 0) & (probs < 1))
    assert bundle.model.forward_calls == 2


def test_fm_matches_manual_pairwise_sum(tiny_batch, make_bundle):
    bundle = make_bundle("fm", use_adapter=False)
    model = bundle.model
    assert isinstance(model, FMModel)
    model.bias.assign(np.array([0.25]))
    tape = ComputeTape()
    es = lookup(tape, bundle.schema, bundle.tables, tiny_batch)
    pooled = []
    for kind in ("user", "item", "context"):
        idx = bundle.schema.indices([kind])
        pooled.append(sum(es.vectors[i].value for i in idx))
    u, i, c = pooled
    expected = (u * i).sum(1) + (u * c).sum(1) + (i * c).sum(1) + 0.25
    np.testing.assert_allclose(model.logits(tape, es).value.reshape(-1), expected, atol=1e-12)


def test_two_tower_item_vectors_ignore_user_features(tiny_batch, make_bundle):
    bundle = make_bundle("two_tower", use_adapter=False)
    model = bundle.model
    assert isinstance(model, TwoTowerModel)
    tape = ComputeTape()
    es = lookup(tape, bundle.schema, bundle.tables, tiny_batch)
    item_vec = model.item_vectors(tape, es.select(model.item_indices)).value
    shuffled = tiny_batch.take(np.arange(len(tiny_batch)))
    for name in bundle.schema.names:
        if bundle.schema.index(name) in model.user_indices:
            shuffled.values[name] = shuffled.values[name][::-1].copy()
    for name in shuffled.lengths:
        if bundle.schema.index(name) in model.user_indices:
            shuffled.lengths[name] = shuffled.lengths[name][::-1].copy()
    es2 = lookup(tape, bundle.schema, bundle.tables, shuffled)
    np.testing.assert_array_equal(model.item_vectors(tape, es2.select(model.item_indices)).value, item_vec)
    user_vec = model.user_vectors(tape, es.select(model.user_indices)).value
    np.testing.assert_allclose(model.logits(tape, es).value.reshape(-1), (user_vec * item_vec).sum(1), atol=1e-12)


def test_model_rejects_wrong_feature_count(tiny_batch, make_bundle):
    bundle = make_bundle(use_adapter=False)
    tape = ComputeTape()
    es = lookup(tape, bundle.schema, bundle.tables, tiny_batch)
    with pytest.raises(ValueError):
        bundle.model.logits(tape, es.select([0, 1]))


def test_build_model_names_parameters_by_kind(tiny_data):
    schema = tiny_data.train.schema
    names = {p.name for p in build_model(ModelConfig(kind="two_tower", tower_hidden=[4], latent=3), schema).parameters()}
    assert any(n.startswith("model/user_tower/") for n in names)
    assert any(n.startswith("model/item_tower/") for n in names)


def _pair_schema():
    return FeatureSchema(
        (FeatureSpec("user_id", "user", "id_based", 3), FeatureSpec("item_id", "item", "id_based", 3)),
        dim=2,
    )


def _pair_set(tape, u, i):
    frame = pd.DataFrame({"user_id": [1], "item_id": [1], "label": [1], "user": [1], "item": [1]})
    return lookup(tape, _pair_schema(), _fixed_tables(u, i), encode_frame(_pair_schema(), frame))


def _fixed_tables(u, i):
    tables = EmbeddingTables(_pair_schema())
    tables.initialize(np.random.default_rng(0))
    tables.tables[0].assign(np.array([[0.0, 0.0], u, [0.0, 0.0]]))
    tables.tables[1].assign(np.array([[0.0, 0.0], i, [0.0, 0.0]]))
    return tables


def test_zeroed_output_layer_predicts_one_half(tiny_batch, make_bundle):
    bundle = make_bundle("mlp", use_adapter=False)
    W, b = bundle.model.stack.layers[-1]
    W.assign(np.zeros(W.shape))
    b.assign(np.zeros(b.shape))
    tape = ComputeTape()
    probs = bundle.model.predict(tape, lookup(tape, bundle.schema, bundle.tables, tiny_batch)).value
    np.testing.assert_array_equal(probs, 0.5)


def test_fm_worked_example():
    model = build_model(ModelConfig(kind="fm"), _pair_schema())
    model.initialize(np.random.default_rng(0))
    tape = ComputeTape()
    prob = model.predict(tape, _pair_set(tape, [1.0, 0.0], [1.0, 0.0])).value
    assert float(prob[0, 0]) == pytest.approx(0.7310585786, abs=1e-9)


def test_two_tower_worked_example():
    model = build_model(ModelConfig(kind="two_tower", tower_hidden=[], latent=2), _pair_schema())
    for W, b in model.user_tower.layers + model.item_tower.layers:
        W.assign(np.eye(2))
        b.assign(np.zeros(2))
    tape = ComputeTape()
    prob = model.predict(tape, _pair_set(tape, [1.0, 1.0], [1.0, 1.0])).value
    assert float(prob[0, 0]) == pytest.approx(1.0 / (1.0 + np.exp(-2.0)), abs=1e-12)
