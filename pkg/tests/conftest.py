import numpy as np
import pytest

from adafm.synthetic_generate import SynthConfig, generate_synthetic
from utils.adapter import AdapterConfig
from utils.modeling import ModelConfig
from utils.training import ModelBundle

TINY = SynthConfig(
    n_users=30, n_items=20, n_samples=300, n_meta=1, meta_vocab=3, n_authors=5,
    history_len=2, days=20, cold_fraction=0.1, seed=0,
)


@pytest.fixture(scope="session")
def tiny_data():
    return generate_synthetic(TINY, dim=3)


@pytest.fixture
def tiny_batch(tiny_data):
    return tiny_data.train.encode().take(np.arange(8))


def small_model_config(kind: str = "mlp") -> ModelConfig:
    return ModelConfig(kind=kind, hidden=[4, 1], tower_hidden=[4], latent=3)


@pytest.fixture
def make_bundle(tiny_data):
    def factory(kind="mlp", use_adapter=True, seed=0, **adapter_kw):
        adapter_kw = {"hidden": 4, "zero_init_output": False, **adapter_kw}
        return ModelBundle(
            tiny_data.train.schema,
            small_model_config(kind),
            AdapterConfig(**adapter_kw),
            use_adapter=use_adapter,
            user_count_columns=tiny_data.stats.user_count_columns,
            item_count_columns=tiny_data.stats.item_count_columns,
        ).initialize(seed)

    return factory
