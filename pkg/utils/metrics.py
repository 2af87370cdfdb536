# utils/metrics.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

# ===============================================================
# RANKING METRICS
# ===============================================================

def auc(scores, labels) -> Optional[float]:
    """Rank-sum AUC with half credit for ties; None when only one class is present."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"❌ scores {scores.shape} and labels {labels.shape} differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def uauc(scores, labels, user_ids) -> Optional[float]:
    """Per-user AUC averaged with weights = each eligible user's sample count."""
    frame = pd.DataFrame({"s": np.asarray(scores, dtype=np.float64), "y": np.asarray(labels), "u": np.asarray(user_ids)})
    total, weight = 0.0, 0
    for _, group in frame.groupby("u", sort=True):
        value = auc(group["s"].to_numpy(), group["y"].to_numpy())
        if value is None:
            continue
        total += len(group) * value
        weight += len(group)
    return total / weight if weight else None


def rela_impr(auc_new: Optional[float], auc_base: Optional[float]) -> Optional[float]:
    """Relative AUC improvement in percent."""
    if auc_new is None or auc_base is None:
        return None
    if auc_base <= 0:
        raise ValueError(f"❌ Baseline AUC must be > 0, got {auc_base}")
    return (auc_new / auc_base - 1.0) * 100.0


# ===============================================================
# STATE BUCKETS
# ===============================================================

@dataclass(frozen=True)
class GroupRule:
    """Half-open intervals [edges[j], edges[j+1]) over a per-entity statistic."""

    name: str
    stat: str
    edges: tuple[float, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.labels) + 1:
            raise ValueError(f"❌ Rule '{self.name}' needs one more edge than labels")
        if list(self.edges) != sorted(self.edges):
            raise ValueError(f"❌ Rule '{self.name}' edges must be increasing")

    def assign(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        idx = np.searchsorted(np.asarray(self.edges), values, side="right") - 1
        idx = np.clip(idx, 0, len(self.labels) - 1)
        return np.asarray(self.labels, dtype=object)[idx]


USER_STATE_RULE = GroupRule("user_state", "user_events", (0, 1, 20, 100, np.inf), ("new", "low", "mid", "high"))
ITEM_IMPRESSION_RULE = GroupRule(
    "item_impressions", "item_impressions", (0, 128, 512, 1024, np.inf), ("0-128", "128-512", "512-1024", "1024+")
)
ITEM_STATE_RULE = GroupRule("item_state", "item_impressions", (0, 1, 50, np.inf), ("cold", "warm", "hot"))

GROUP_RULES = {r.name: r for r in (USER_STATE_RULE, ITEM_IMPRESSION_RULE, ITEM_STATE_RULE)}


@dataclass
class MetricReport:
    auc: Optional[float]
    uauc: Optional[float]
    n: int
    buckets: pd.DataFrame = field(default_factory=pd.DataFrame)

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "uauc": self.uauc,
            "n": self.n,
            "buckets": self.buckets.astype(object).where(self.buckets.notna(), None).to_dict(orient="records"),
        }

    def to_text(self) -> str:
        lines = [f"AUC  {_fmt(self.auc)}", f"UAUC {_fmt(self.uauc)}", f"n    {self.n:,}"]
        if not self.buckets.empty:
            lines.append(self.buckets.to_string(index=False))
        return "\n".join(lines)


def _fmt(value: Optional[float]) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def bucket_report(scores, labels, entity_stats, rule: GroupRule, user_ids=None) -> MetricReport:
    """AUC and sample count per bucket; every bucket of the rule is listed, empty ones with AUC None."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    groups = rule.assign(entity_stats)
    rows = []
    for label in rule.labels:
        sel = groups == label
        rows.append({"rule": rule.name, "bucket": label, "n": int(sel.sum()), "auc": auc(scores[sel], labels[sel]) if sel.any() else None})
    buckets = pd.DataFrame(rows, columns=["rule", "bucket", "n", "auc"])
    return MetricReport(
        auc=auc(scores, labels),
        uauc=uauc(scores, labels, user_ids) if user_ids is not None else None,
        n=len(scores),
        buckets=buckets,
    )


def evaluate_scores(scores, labels, user_ids, bucket_inputs: Sequence[tuple[GroupRule, np.ndarray]] = ()) -> MetricReport:
    """Global AUC/UAUC plus any number of bucket tables stacked together."""
    tables = [bucket_report(scores, labels, stats, rule).buckets for rule, stats in bucket_inputs]
    return MetricReport(
        auc=auc(scores, labels),
        uauc=uauc(scores, labels, user_ids),
        n=len(np.asarray(scores)),
        buckets=pd.concat(tables, ignore_index=True) if tables else pd.DataFrame(),
    )
