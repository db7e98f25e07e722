"""Single-file pipeline configuration with strict key validation.

Unknown keys are rejected so typos fail loudly; missing keys take the
documented defaults. The effective configuration each command ran with is
emitted as JSON and re-ingests to an identical run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .complexity import AllocationConfig
from .losses import LossWeights
from .training import TrainConfig


@dataclass(frozen=True)
class ScheduleConfig:
    theta_start: float = 0.1
    theta_end: float = 0.3


@dataclass(frozen=True)
class DepthProjectionConfig:
    splat_radius_px: int = 1
    z_tolerance: float = 0.05

    def __post_init__(self):
        if self.splat_radius_px < 0:
            raise ValueError("splat_radius_px must be >= 0")
        if self.z_tolerance < 0.0:
            raise ValueError("z_tolerance must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    allocation: AllocationConfig = field(default_factory=AllocationConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    depth: DepthProjectionConfig = field(default_factory=DepthProjectionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_NESTED = {
    "allocation": AllocationConfig,
    "schedule": ScheduleConfig,
    "depth": DepthProjectionConfig,
    "train": TrainConfig,
    "loss_weights": LossWeights,
}


def _build(cls, data: dict, context: str):
    if not isinstance(data, dict):
        raise ValueError(f"config section {context!r} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown config key(s) in {context!r}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED and isinstance(value, dict):
            kwargs[key] = _build(_NESTED[key], value, f"{context}.{key}")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "config")


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> PipelineConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def dump_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Replace dotted-path fields, e.g. {"allocation.k": 16, "seed": 3}."""
    data = config_to_dict(cfg)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node[part]
        if parts[-1] not in node:
            raise KeyError(f"unknown config path {dotted!r}")
        node[parts[-1]] = value
    return config_from_dict(data)
