import json

import numpy as np
import pandas as pd
import pytest
import yaml

from adafm.cli import main
from utils.training import load_checkpoint

TINY = [
    "--set", "synthetic.n_users=30", "--set", "synthetic.n_items=20", "--set", "synthetic.n_samples=300",
    "--set", "synthetic.n_meta=1", "--set", "synthetic.meta_vocab=3", "--set", "synthetic.n_authors=5",
    "--set", "synthetic.history_len=2", "--set", "synthetic.days=20", "--set", "synthetic.cold_fraction=0.1",
    "--set", "dataset.dim=3", "--set", "model.hidden=[4, 1]", "--set", "adapter.hidden=4",
    "--set", "trainer.epochs=1", "--set", "trainer.batch_size=64",
]


def run(*args):
    return main([*args, *TINY])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("train", "--out", str(out), "--seed", "3", "--quiet") == 0
    return out


def test_train_writes_artifacts(trained):
    for name in ("checkpoint", "train_log", "resolved_config", "history.csv"):
        assert (trained / name).exists()
    records = [json.loads(line) for line in (trained / "train_log").read_text().splitlines()]
    assert records and all("total" in r or "val_auc" in r for r in records)


def test_training_is_reproducible(trained, tmp_path):
    assert run("train", "--out", str(tmp_path), "--seed", "3", "--quiet") == 0
    first, _ = load_checkpoint(trained / "checkpoint")
    second, _ = load_checkpoint(tmp_path / "checkpoint")
    a, b = first.state_dict(), second.state_dict()
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])


def test_eval_against_itself_as_baseline(trained, capsys):
    assert main(["eval", "--out", str(trained)]) == 0
    report = json.loads((trained / "report").read_text())
    assert {"auc", "uauc", "n", "buckets"} <= report.keys()
    capsys.readouterr()
    assert main(["eval", "--out", str(trained), "--baseline", str(trained / "report")]) == 0
    printed = capsys.readouterr().out
    assert "RelaImpr AUC" in printed
    assert "+0.00%" in printed or "undefined" in printed


def test_analyze_writes_heatmaps(trained):
    assert main(["analyze", "--out", str(trained), "--split", "val"]) == 0
    user = pd.read_csv(trained / "heatmap_user.csv", index_col=0)
    values = user.drop(columns="n").to_numpy()
    assert np.all((values > 0) & (values < 1))
    assert (trained / "heatmap_item.csv").exists() and (trained / "bucket_report.csv").exists()


def test_analyze_without_adapter_fails(tmp_path, capsys):
    assert run("train", "--out", str(tmp_path), "--set", "trainer.ablation=base_only", "--quiet") == 0
    assert main(["analyze", "--out", str(tmp_path)]) == 1
    assert "without a state-aware adapter" in capsys.readouterr().out


def test_gradcheck_passes_and_catches_corruption(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    assert len(pd.read_csv(tmp_path / "gradcheck.csv")) == 4
    assert main(["gradcheck", "--out", str(tmp_path), "--corrupt-gradient"]) != 0


def test_gradcheck_all_models(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path), "--all-models", "--set", "gradcheck.max_coords=20"]) == 0
    table = pd.read_csv(tmp_path / "gradcheck.csv")
    assert len(table) == 12 and table["passed"].all()


def test_gen_synth(tmp_path):
    assert run("gen-synth", "--out", str(tmp_path), "--format", "parquet") == 0
    for split in ("train", "val", "test"):
        assert (tmp_path / f"synthetic_{split}.parquet").exists()
    assert (tmp_path / "schema.yaml").exists()


def test_compare_summarises_every_ablation(tmp_path):
    assert run("compare", "--out", str(tmp_path), "--seeds", "0") == 0
    summary = pd.read_csv(tmp_path / "compare_summary.csv", index_col=0)
    assert list(summary.index) == ["base_only", "mask_only", "adapter_only", "full"]
    assert "auc_relaimpr" in summary.columns
    assert (tmp_path / "resolved_config").exists()


def test_invalid_config_exit_code(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--set", "trainer.lr=-1"]) == 2
    assert main(["eval", "--out", str(tmp_path / "nothing")]) == 1


def test_eval_applies_overrides_to_the_stored_run_config(trained, tmp_path):
    args = ["eval", "--checkpoint", str(trained / "checkpoint"), "--out", str(tmp_path)]
    assert main(args + ["--set", "metrics.item_rule=item_state", "--seed", "11"]) == 0
    rules = {row["rule"] for row in json.loads((tmp_path / "report").read_text())["buckets"]}
    assert "item_state" in rules and "item_impressions" not in rules
    resolved = yaml.safe_load((tmp_path / "resolved_config").read_text())
    assert resolved["metrics"]["item_rule"] == "item_state"
    assert resolved["seed"] == 11
    assert resolved["synthetic"]["n_users"] == 30


@pytest.mark.parametrize(
    "command",
    [
        ["gradcheck", "--set", "gradcheck.max_coords=10"],
        ["gen-synth"],
        ["eval"],
        ["analyze"],
    ],
    ids=lambda c: c[0],
)
def test_every_command_writes_its_resolved_config(trained, tmp_path, command):
    extra = ["--checkpoint", str(trained / "checkpoint")] if command[0] in ("eval", "analyze") else []
    assert main([*command, *extra, "--out", str(tmp_path), *TINY]) == 0
    assert (tmp_path / "resolved_config").exists()
