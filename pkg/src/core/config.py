"""
Configuration management for spider-recon

Process-level settings come from the environment (``SPIDER_*``); experiment
settings come from flat ``section.key = value`` files and CLI overrides.
"""
import math
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

import pydantic
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.exceptions import ConfigError

Precision = Literal["float32", "float64"]


class Settings(BaseSettings):
    """Application settings"""

    log_level: str = "INFO"
    log_file: Optional[str] = None
    log_json: bool = False

    workers: int = 1
    precision: Precision = "float32"

    model_config = SettingsConfigDict(env_file=".env", env_prefix="SPIDER_", case_sensitive=False)


def get_settings() -> Settings:
    """Get application settings"""
    return Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class VolumeConfig(_Section):
    dims: Tuple[int, int, int] = (64, 64, 64)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    @field_validator("dims")
    @classmethod
    def _dims(cls, v):
        if min(v) < 2:
            raise ValueError(f"dims components must be >= 2, got {v}")
        return v

    @field_validator("spacing")
    @classmethod
    def _spacing(cls, v):
        if min(v) <= 0:
            raise ValueError(f"spacing components must be > 0, got {v}")
        return v


class DetectorConfig(_Section):
    """Detector size; pitches default to filling the detector with the volume footprint"""

    nu: int = 128
    nv: int = 128
    pitch_u: Optional[float] = None
    pitch_v: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if self.nu < 2 or self.nv < 2:
            raise ValueError("detector needs at least 2x2 pixels")
        for pitch in (self.pitch_u, self.pitch_v):
            if pitch is not None and pitch <= 0:
                raise ValueError("detector pitch must be > 0")
        return self


class UNetConfig(_Section):
    depth: int = 3
    channels: Tuple[int, ...] = (16, 32, 64)
    output_channels: int = 32
    in_channels: int = 1

    @model_validator(mode="after")
    def _check(self):
        if self.depth < 1 or len(self.channels) != self.depth:
            raise ValueError(f"need one channel count per level, depth={self.depth} channels={self.channels}")
        if min(self.channels) < 1 or self.output_channels < 1:
            raise ValueError("channel counts must be positive")
        return self


class HashEncoderConfig(_Section):
    levels: int = 11
    features_per_level: int = 8
    base_resolution: int = 4
    max_resolution: int = 128
    log2_table_size: int = 14
    primes: Tuple[int, int, int] = (3674653429, 2654435761, 805459861)

    @model_validator(mode="after")
    def _check(self):
        if self.levels < 1 or self.features_per_level < 1:
            raise ValueError("levels and features_per_level must be positive")
        if self.levels > 1 and self.max_resolution <= self.base_resolution:
            raise ValueError("max_resolution must exceed base_resolution")
        resolutions = self.resolutions
        if any(b <= a for a, b in zip(resolutions, resolutions[1:])):
            raise ValueError(f"per-level resolutions not strictly increasing: {resolutions}")
        return self

    @property
    def table_size(self) -> int:
        return 1 << self.log2_table_size

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level

    @property
    def growth_factor(self) -> float:
        if self.levels == 1:
            return 1.0
        return (self.max_resolution / self.base_resolution) ** (1.0 / (self.levels - 1))

    @property
    def resolutions(self) -> Tuple[int, ...]:
        b = self.growth_factor
        return tuple(int(math.floor(self.base_resolution * b ** level + 1e-9)) for level in range(self.levels))


class DecoderConfig(_Section):
    topology: Literal["shared", "two_branch", "two_stage"] = "shared"
    hidden_layers: int = 4
    width: int = 128
    num_classes: int = 4

    @model_validator(mode="after")
    def _check(self):
        if self.num_classes < 2:
            raise ValueError("num_classes counts background and needs at least one structure")
        if self.hidden_layers < 1 or self.width < 1:
            raise ValueError("decoder needs at least one hidden layer")
        return self


class TrainConfig(_Section):
    lambda_int: float = 1.0
    lambda_seg: float = 0.3
    epochs: int = 500
    points_per_step: int = 4096
    seed: int = 0
    dice_epsilon: float = 1e-6
    precision: Precision = "float32"
    base_lr: float = 0.001
    decay_factor: float = 0.5
    decay_every: int = 100
    sampling: Literal["uniform", "balanced"] = "uniform"
    classes_included: Optional[Tuple[int, ...]] = None
    eval_every: int = 10

    @model_validator(mode="after")
    def _check(self):
        if self.lambda_int < 0 or self.lambda_seg < 0:
            raise ValueError("loss weights must be >= 0")
        if self.dice_epsilon <= 0:
            raise ValueError("dice_epsilon must be > 0")
        if self.base_lr <= 0 or self.decay_factor <= 0 or self.decay_every < 1:
            raise ValueError("learning-rate schedule must stay positive")
        if self.epochs < 0 or self.points_per_step < 1:
            raise ValueError("epochs >= 0 and points_per_step >= 1 required")
        return self


class ExperimentConfig(_Section):
    volume: VolumeConfig = VolumeConfig()
    detector: DetectorConfig = DetectorConfig()
    encoder: UNetConfig = UNetConfig()
    hash: HashEncoderConfig = HashEncoderConfig()
    decoder: DecoderConfig = DecoderConfig()
    train: TrainConfig = TrainConfig()


def parse_kv_text(text: str, source: str = "<string>") -> Dict[str, Any]:
    """Parse ``key = value`` lines; commas make lists, ``none`` makes None"""
    entries: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = _parse_value(value)
    return entries


def _parse_value(value: str) -> Any:
    if value.lower() in ("none", ""):
        return None
    if "," in value:
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


def load_kv_file(path: Path | str) -> Dict[str, Any]:
    path = Path(path)
    return parse_kv_text(path.read_text(encoding="utf-8"), source=str(path))


def _nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        node = nested
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key {key!r} collides with a scalar entry")
        node[parts[-1]] = value
    return nested


def build_experiment_config(
    file_entries: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Merge defaults < file < overrides and validate"""
    merged: Dict[str, Any] = dict(file_entries or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(_nest(merged))
    except pydantic.ValidationError as e:
        raise ConfigError(str(e)) from e


def flatten_config(config: BaseModel, prefix: str = "") -> Dict[str, Any]:
    """Inverse of the key-value grammar, used for config echoes"""
    flat: Dict[str, Any] = {}
    for name, value in config:
        key = f"{prefix}{name}"
        if isinstance(value, BaseModel):
            flat.update(flatten_config(value, prefix=f"{key}."))
        else:
            flat[key] = value
    return flat


def dump_kv_text(config: BaseModel) -> str:
    lines = []
    for key, value in flatten_config(config).items():
        if value is None:
            text = "none"
        elif isinstance(value, (tuple, list)):
            text = ", ".join(str(v) for v in value) + ("," if len(value) == 1 else "")
        elif isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
