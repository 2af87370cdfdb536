from pathlib import Path

import pytest

from adafm.config import build_config, load_config, parse_overrides

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_overrides_are_parsed_as_yaml_scalars():
    parsed = parse_overrides(["trainer.lr=0.01", "model.hidden=[8, 1]", "adapter.enabled=false", "out=runs/x"])
    assert parsed == {"trainer.lr": 0.01, "model.hidden": [8, 1], "adapter.enabled": False, "out": "runs/x"}
    with pytest.raises(ValueError):
        parse_overrides(["trainer.lr"])


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    config = load_config(path)
    assert config.trainer.ablation == "full"


def test_overrides_and_flags_win_over_file():
    config = load_config(CONFIGS / "synthetic_mlp.yaml", ["trainer.epochs=1", "mask.k=2"], seed=4, out="runs/t")
    assert (config.trainer.epochs, config.mask.k, config.seed, config.out) == (1, 2, 4, "runs/t")


def test_every_bad_key_path_is_reported():
    with pytest.raises(ValueError) as err:
        build_config({"trainer": {"lr": -1.0, "nope": 1}, "dataset": {"split": [0.5, 0.5]}, "mask": {"beta": 0.9, "gamma": 0.1}, "extra": {}, "seed": -2})
    text = str(err.value)
    for path in ("trainer.nope", "mask:", "dataset:", "extra", "seed"):
        assert path in text


def test_synthetic_seed_follows_run_seed():
    assert build_config({"seed": 9}).synthetic.seed == 9
    assert build_config({"seed": 9, "synthetic": {"seed": 2}}).synthetic.seed == 2


def test_dump_round_trip(tmp_path):
    config = load_config(CONFIGS / "two_tower.yaml", ["trainer.grad_clip=5.0"])
    again = load_config(config.dump(tmp_path / "resolved.yaml"))
    assert again == config
    assert config.replace(**{"trainer.lr": 0.02}).trainer.lr == 0.02
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.yaml")
