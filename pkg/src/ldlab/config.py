"""Run configuration: typed sections, file loading and the frozen run record.

A config file (YAML or JSON) maps option names to values for one command.
Command-line flags override file values, and the fully resolved options
are written to ``run_config.json`` in the output directory. Feeding that
file back through ``--config`` repeats the run.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .exceptions import BadConfig, IoError

FROZEN_NAME = "run_config.json"


def _from_dict(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise BadConfig(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    """Denoiser training options shared by stage 1, stage 2 and the one-step model."""

    steps: int = 5000
    batch_size: int = 4
    learning_rate: float = 1e-5
    T: int = 200
    beta_start: float = 5e-4
    beta_end: float = 0.1
    cfg_drop_prob: float = 0.1
    seed: int = 0
    checkpoint_every: int = 0
    ema_decay: float = 0.999
    base_width: int = 16
    depth: int = 3
    timestep_embedding_dim: int = 64
    stroke_radius_px: float = 1.0

    def __post_init__(self):
        if self.steps < 0:
            raise BadConfig("steps must be >= 0")
        if not 0.0 <= self.cfg_drop_prob <= 0.5:
            raise BadConfig("cfg_drop_prob must lie in [0, 0.5]")
        if self.batch_size < 1 or self.learning_rate <= 0 or self.T < 1:
            raise BadConfig("batch_size, learning_rate and T must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise BadConfig("ema_decay must lie in [0, 1)")
        if self.checkpoint_every < 0:
            raise BadConfig("checkpoint_every must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _from_dict(cls, d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SamplerConfig:
    ddim_steps: int = 50
    guidance_w: float = 2.0

    def __post_init__(self):
        if self.ddim_steps < 1:
            raise BadConfig("ddim_steps must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        return _from_dict(cls, d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DetectorTrainConfig:
    steps: int = 3000
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    checkpoint_every: int = 0
    input_size: int = 64
    base_width: int = 32
    hourglass_depth: int = 2
    heatmap_stride: int = 4
    sigma_px: float = 1.5

    def __post_init__(self):
        if self.steps < 0:
            raise BadConfig("steps must be >= 0")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise BadConfig("batch_size and learning_rate must be positive")
        if self.checkpoint_every < 0:
            raise BadConfig("checkpoint_every must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorTrainConfig":
        return _from_dict(cls, d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AutoencoderTrainConfig:
    downsample_factor: int = 1
    latent_channels: int = 3
    base_width: int = 32
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "AutoencoderTrainConfig":
        return _from_dict(cls, d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config_file(path) -> dict:
    """Read a YAML or JSON mapping. A frozen run record yields its ``options``."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise IoError(f"cannot read config {path}: {e}") from e
    data = yaml.safe_load(text) if str(path).endswith((".yaml", ".yml")) else json.loads(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise BadConfig(f"config {path} must hold a mapping")
    if "options" in data and "command" in data:
        return dict(data["options"])
    return data


def freeze(out_dir, command: str, seed: int, options: dict) -> Path:
    """Write the resolved run record next to the run's outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / FROZEN_NAME
    record = {"command": command, "seed": int(seed), "options": options}
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path
