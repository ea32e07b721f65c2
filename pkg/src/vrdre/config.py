"""Declarative experiment configuration."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .backbone import Pooling, ToyEncoderConfig
from .core import coerce_enum
from .decode import DEFAULT_TAU
from .ingest import DatasetName
from .preprocess import MarkerMode


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    name: str = "SYNTHETIC"
    root: Optional[str] = None
    group_key: str = "group_id"
    label_set: list = field(default_factory=list)
    train_split: str = "train"
    eval_split: str = "test"
    # SYNTHETIC only: corpus size, how many trailing docs form the test split, generator seed
    n_docs: int = 200
    n_test: int = 50
    corpus_seed: int = 0


@dataclass
class Strategies:
    eef: bool = False
    em: str = "NONE"
    lc: bool = False
    bbo: bool = False
    bbs: bool = False
    rsf: bool = False
    variance_loss: bool = False


@dataclass
class LossWeights:
    re: float = 1.0
    ee: float = 1.0
    var: float = 1.0


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    strategies: Strategies = field(default_factory=Strategies)
    tau: float = DEFAULT_TAU
    pooling: str = "FIRST"
    seed: int = 0
    lr: float = 1e-3
    steps: int = 1000
    batch_size: int = 2
    eval_every: int = 200
    held_out_fraction: float = 0.1
    loss_weights: LossWeights = field(default_factory=LossWeights)
    backbone: ToyEncoderConfig = field(default_factory=ToyEncoderConfig)
    d_proj: int = 128
    max_len: int = 512
    stride: int = 0
    markers_in_span: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        try:
            self.strategies.em = coerce_enum(MarkerMode, self.strategies.em).value
            self.pooling = coerce_enum(Pooling, self.pooling).value
            self.dataset.name = coerce_enum(DatasetName, self.dataset.name).value
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.strategies.em == MarkerMode.PUNCT.value:
            raise ConfigError("PUNCT entity markers are for token-budget analysis only, not training")
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")
        if not 0 <= self.held_out_fraction < 1:
            raise ConfigError("held_out_fraction must be in [0, 1)")
        if any(w < 0 for w in asdict(self.loss_weights).values()):
            raise ConfigError("loss weights must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.max_len > self.backbone.max_len:
            raise ConfigError("max_len exceeds the backbone's position table")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        return _build(cls, data, "config")

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(deep_merge(self.to_dict(), overrides))

    def training_key(self) -> str:
        """Identity of everything that affects training (decode-only fields excluded)."""
        data = self.to_dict()
        data.pop("name")
        data.pop("tau")
        data["strategies"].pop("rsf")
        return json.dumps(data, sort_keys=True)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown field(s) in {path}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        sub = _nested_types.get((cls.__name__, name))
        kwargs[name] = _build(sub, value, f"{path}.{name}") if sub is not None else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


_nested_types = {
    ("ExperimentConfig", "dataset"): DatasetConfig,
    ("ExperimentConfig", "strategies"): Strategies,
    ("ExperimentConfig", "loss_weights"): LossWeights,
    ("ExperimentConfig", "backbone"): ToyEncoderConfig,
}


def deep_merge(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_structured(path: Union[str, Path]) -> Any:
    """Read a YAML or JSON file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    return ExperimentConfig.from_dict(load_structured(path) or {})
