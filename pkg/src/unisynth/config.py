"""Experiment configuration: nested dataclasses loaded from YAML with dotted overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .conditioning import CurriculumSchedule
from .data import DEFAULT_CONTRAST, DEFAULT_MODALITIES, PhantomSpec
from .losses import LossWeights
from .model import ModelConfig


@dataclass
class TrainConfig:
    optimizer: str = "sgd"          # "sgd" or "adam"
    lr: float = 2e-4
    momentum: float = 0.0
    betas: tuple[float, float] = (0.5, 0.999)
    epochs: int = 200
    decay_start: int = 50
    batch_size: int = 32
    curriculum: tuple[int, int, int] = (10, 10, 10)
    uniform_over: str = "counts"    # "counts" or "subsets"
    loss_weights: tuple[float, float, float] = (100.0, 30.0, 1.0)
    reduction: str = "mean"
    update_discriminator: bool = True
    checkpoint_every: int = 10
    shuffle: bool = True

    def validate(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.decay_start <= self.epochs:
            raise ValueError("decay_start must lie in [0, epochs]")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        CurriculumSchedule(tuple(self.curriculum))
        LossWeights(*self.loss_weights)

    @property
    def schedule(self):
        return CurriculumSchedule(tuple(self.curriculum))

    @property
    def weights(self):
        return LossWeights(*self.loss_weights)


@dataclass
class DataConfig:
    root: str = "data"
    train_split: str = "train"
    test_split: str = "test"
    n_slices: int | None = None
    crop: tuple[int, int] | None = None
    normalize: bool = True
    normalize_nonzero: bool = True


@dataclass
class PhantomConfig:
    n_train: int = 25
    n_val: int = 0
    n_test: int = 5
    depth: int = 8
    noise_std: float = 0.01
    blob_count: tuple[int, int] = (1, 3)
    contrast: tuple = DEFAULT_CONTRAST

    def spec(self, model: ModelConfig, names) -> PhantomSpec:
        return PhantomSpec(model.n_modalities, tuple(model.image_size), self.depth, tuple(self.blob_count),
                           tuple(tuple(r) for r in self.contrast), self.noise_std, tuple(names))


@dataclass
class ExperimentConfig:
    modalities: tuple[str, ...] = DEFAULT_MODALITIES
    seed: int = 0
    run_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)

    def validate(self):
        if len(self.modalities) != self.model.n_modalities:
            raise ValueError(f"{len(self.modalities)} modality names for {self.model.n_modalities} modalities")
        self.train.validate()
        return self

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data or {})


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data):
    if not isinstance(data, dict):
        raise ValueError(f"expected a mapping for {cls.__name__}, got {data!r}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _build(sub, value) if sub else _coerce(known[name], _tupled(value))
    return cls(**kwargs)


def _coerce(f, value):
    # YAML reads "1e-3" as a string; follow the type of the field's default
    default = f.default
    if isinstance(default, float) and isinstance(value, (str, int)) and not isinstance(value, bool):
        return float(value)
    if (isinstance(default, tuple) and default and all(isinstance(d, float) for d in default)
            and isinstance(value, tuple)):
        return tuple(float(v) for v in value)
    return value


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


_NESTED = {
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "phantom"): PhantomConfig,
}


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings (values parsed as YAML) to a config dict."""
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not key=value")
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides=None) -> ExperimentConfig:
    data = {}
    if path is not None:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return ExperimentConfig.from_dict(apply_overrides(data, overrides)).validate()


def dump_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
    return path
