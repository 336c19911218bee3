"""Run configuration: a single JSON document whose defaults reproduce the
published training setup (temperature 0.03, stage-1 lr 5e-5 with batch 32
-> 64 views over 50 epochs, stage-2 lr 0.01 with patience 5, baseline lr
1e-5 with batch 64)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .augment import AugmentPolicy
from .data import SplitSpec
from .errors import ConfigError, IoFailure
from .losses import LossConfig
from .model import EncoderConfig
from .synthetic import SyntheticConfig
from .train import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    outdir: str = "runs/default"
    dataset_root: str | None = None
    synthetic: SyntheticConfig | None = None
    split: SplitSpec = field(default_factory=lambda: SplitSpec(5, 2, 3))
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    projection_dim: int = 96
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.dataset_root is None and self.synthetic is None:
            raise ConfigError("dataset", "need either dataset_root or synthetic block")
        if self.projection_dim < 2:
            raise ConfigError("projection_dim", f"must be >= 2, got {self.projection_dim}")
        self.augment.validate()
        self.encoder.validate()
        self.loss.validate()
        self.train.validate()
        if self.synthetic is not None:
            try:
                self.synthetic.validate()
            except ValueError as e:
                raise ConfigError("synthetic", str(e)) from e

    @property
    def data_root(self) -> str:
        # Synthetic datasets are written under <outdir>/data.
        import os

        if self.dataset_root is not None:
            return self.dataset_root
        return os.path.join(self.outdir, "data")


from .train import BaselineConfig, Stage1Config, Stage2Config  # noqa: E402

_NESTED = {
    "synthetic": SyntheticConfig,
    "split": SplitSpec,
    "augment": AugmentPolicy,
    "encoder": EncoderConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "stage1": Stage1Config,
    "stage2": Stage2Config,
    "baseline": BaselineConfig,
}


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
        sub = f"{path}.{key}" if path else key
        if isinstance(value, dict):
            nested_cls = _NESTED.get(key)
            if nested_cls is None:
                raise ConfigError(sub, "unexpected object value")
            kwargs[key] = _from_dict(nested_cls, value, sub)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(path or cls.__name__, str(e)) from e


def run_config_from_dict(data: dict) -> RunConfig:
    cfg = _from_dict(RunConfig, data, "")
    cfg.validate()
    return cfg


def run_config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise IoFailure(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"invalid JSON in {path}: {e}") from e
    return run_config_from_dict(data)


def save_run_config(cfg: RunConfig, path: str) -> None:
    try:
        with open(path, "w") as f:
            json.dump(run_config_to_dict(cfg), f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoFailure(f"cannot write config {path}: {e}") from e
