import pandas as pd
import pytest

from utils.scenarios import ablation_overrides, calculate_impact, summarize_runs


def runs():
    return pd.DataFrame(
        [
            {"ablation": "full", "seed": 0, "auc": 0.78, "uauc": 0.70, "cold_auc": 0.62},
            {"ablation": "full", "seed": 1, "auc": 0.80, "uauc": 0.72, "cold_auc": 0.64},
            {"ablation": "base_only", "seed": 0, "auc": 0.76, "uauc": 0.69, "cold_auc": None},
            {"ablation": "base_only", "seed": 1, "auc": 0.78, "uauc": 0.71, "cold_auc": 0.60},
        ]
    )


def test_summary_is_ordered_and_averaged():
    summary = summarize_runs(runs())
    assert list(summary.index) == ["base_only", "full"]
    assert summary.loc["full", "auc"] == pytest.approx(0.79)
    assert summary.loc["base_only", "cold_auc"] == pytest.approx(0.60)
    assert summary.loc["full", "n_seeds"] == 2


def test_impact_against_base_only():
    out = calculate_impact(summarize_runs(runs()), "auc")
    assert out.loc["base_only", "auc_relaimpr"] == 0.0
    assert out.loc["full", "auc_relaimpr"] == pytest.approx((0.79 / 0.77 - 1) * 100)
    with pytest.raises(ValueError):
        calculate_impact(summarize_runs(runs()).drop(index="base_only"))


def test_ablation_overrides():
    assert ablation_overrides("mask_only") == {"trainer.ablation": "mask_only"}
    with pytest.raises(ValueError):
        ablation_overrides("everything")
