"""
config.py
-----------------
YAML run configuration with dotted `--set` overrides.

Sections: dataset, synthetic, stats, model, mask, adapter, trainer, metrics,
gradcheck, compare, plus top-level seed and out. Every section has typed
defaults; validation collects all bad key paths before raising.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, List, Optional

import yaml

from utils.adapter import AdapterConfig
from utils.feature_mask import MaskConfig
from utils.metrics import GROUP_RULES
from utils.modeling import ModelConfig
from utils.training import TrainConfig

from .synthetic_generate import SynthConfig

DATASETS = ("synthetic", "movielens")


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "synthetic"
    path: str = "data/raw/ml-1m"
    schema: str = "configs/schemas/movielens.yaml"
    use_titles: bool = False
    download: bool = False
    split: List[float] = field(default_factory=lambda: [0.6, 0.2, 0.2])
    dim: int = 16

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ValueError(f"name must be one of {DATASETS}, got '{self.name}'")
        if self.dim < 1:
            raise ValueError("dim must be ≥ 1")
        if len(self.split) != 3:
            raise ValueError(f"split needs three ratios (train, val, test), got {list(self.split)}")


@dataclass(frozen=True)
class StatsConfig:
    temporal: bool = False


@dataclass(frozen=True)
class MetricsConfig:
    user_rule: str = "user_state"
    item_rule: str = "item_impressions"
    heatmap_item_rule: str = "item_state"
    max_heatmap_samples: int = 20_000

    def __post_init__(self):
        for rule in (self.user_rule, self.item_rule, self.heatmap_item_rule):
            if rule not in GROUP_RULES:
                raise ValueError(f"unknown group rule '{rule}' (expected one of {sorted(GROUP_RULES)})")


@dataclass(frozen=True)
class GradcheckConfig:
    batch: int = 6
    dim: int = 3
    hidden: int = 4
    eps: float = 1e-5
    tol: float = 1e-4
    max_coords: int = 200


@dataclass(frozen=True)
class CompareConfig:
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    sweep_lr: bool = False


SECTIONS = {
    "dataset": DatasetConfig,
    "synthetic": SynthConfig,
    "stats": StatsConfig,
    "model": ModelConfig,
    "mask": MaskConfig,
    "adapter": AdapterConfig,
    "trainer": TrainConfig,
    "metrics": MetricsConfig,
    "gradcheck": GradcheckConfig,
    "compare": CompareConfig,
}
SCALARS = {"seed": 0, "out": "runs/latest"}


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig
    synthetic: SynthConfig
    stats: StatsConfig
    model: ModelConfig
    mask: MaskConfig
    adapter: AdapterConfig
    trainer: TrainConfig
    metrics: MetricsConfig
    gradcheck: GradcheckConfig
    compare: CompareConfig
    seed: int = 0
    out: str = "runs/latest"

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def dump(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)
        return path

    def replace(self, **overrides: Any) -> "RunConfig":
        """New config with dotted-key overrides applied and validated."""
        tree = self.to_dict()
        for key, value in overrides.items():
            _set_path(tree, key.split("."), value)
        return build_config(tree)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _set_path(tree: dict, path: list[str], value: Any) -> None:
    node = tree
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValueError(f"❌ Cannot set '{'.'.join(path)}': '{part}' is not a section")
    node[path[-1]] = value


def parse_overrides(pairs: Iterable[str]) -> dict[str, Any]:
    """`a.b=value` strings → {"a.b": parsed value}; values are read as YAML scalars/lists."""
    out = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"❌ Override '{pair}' is not of the form key=value")
        out[key.strip()] = yaml.safe_load(raw) if raw.strip() else None
    return out


def build_config(tree: dict) -> RunConfig:
    tree = copy.deepcopy(tree or {})
    errors: list[str] = []
    for key in tree:
        if key not in SECTIONS and key not in SCALARS:
            errors.append(f"{key}: unknown section")

    built = {}
    for name, cls in SECTIONS.items():
        raw = tree.get(name) or {}
        if not isinstance(raw, dict):
            errors.append(f"{name}: expected a mapping")
            continue
        known = {f.name for f in fields(cls)}
        unknown = [k for k in raw if k not in known]
        errors.extend(f"{name}.{k}: unknown key" for k in unknown)
        if unknown:
            continue
        if name == "synthetic" and raw.get("seed") is None:
            raw = {**raw, "seed": tree.get("seed", SCALARS["seed"])}
        try:
            built[name] = cls(**raw)
        except (TypeError, ValueError) as e:
            errors.append(f"{name}: {e}")

    seed = tree.get("seed", SCALARS["seed"])
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errors.append(f"seed: must be a non-negative integer, got {seed!r}")
    out = tree.get("out", SCALARS["out"])
    if not isinstance(out, str) or not out:
        errors.append(f"out: must be a non-empty path, got {out!r}")

    if errors:
        raise ValueError("❌ Invalid configuration:\n  " + "\n  ".join(errors))
    return RunConfig(**built, seed=seed, out=out)


def load_config(path: Optional[str | Path] = None, overrides: Iterable[str] = (), seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    tree: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"❌ Config file not found: {path}")
        with open(path) as fh:
            tree = yaml.safe_load(fh) or {}
        if not isinstance(tree, dict):
            raise ValueError(f"❌ {path} must contain a mapping at the top level")
    return resolve_config(tree, overrides, seed, out)


def resolve_config(tree: dict, overrides: Iterable[str] = (), seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    """Apply `--set` pairs, then --seed / --out, to a config tree and validate it."""
    tree = copy.deepcopy(tree)
    for key, value in parse_overrides(overrides).items():
        _set_path(tree, key.split("."), value)
    if seed is not None:
        tree["seed"] = seed
    if out is not None:
        tree["out"] = out
    return build_config(tree)
