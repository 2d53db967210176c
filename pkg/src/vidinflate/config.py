"""Run configuration files (JSON) with dotted-path overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from vidinflate.errors import ConfigError
from vidinflate.model import ModelConfig
from vidinflate.tuning import TrainRunConfig


def _strict(cls, data, section):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from None


@dataclass
class ScheduleConfig:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class DataConfig:
    n_clips: int = 64
    frames: int = 8
    height: int = 32
    width: int = 32
    seed: int = 0


@dataclass
class PretrainConfig:
    init_seed: int = 0
    steps: int = 200
    batch_size: int = 32
    learning_rate: float = 5e-4
    seed: int = 0


@dataclass
class InflateConfig:
    adapter_seed: int = 1


@dataclass
class SamplingConfig:
    seed: int = 0
    max_clips: int = 4
    clip_ids: list[str] | None = None


@dataclass
class PathsConfig:
    corpus: str = "work/corpus"
    image_ckpt: str = "work/image.ckpt"
    video_ckpt: str = "work/video.ckpt"
    finetuned_ckpt: str = "work/finetuned.ckpt"
    samples: str = "work/samples"
    metrics: str = "work/metrics.json"


SECTIONS = {
    "model": ModelConfig,
    "schedule": ScheduleConfig,
    "tuning": TrainRunConfig,
    "pretrain": PretrainConfig,
    "inflate": InflateConfig,
    "data": DataConfig,
    "sampling": SamplingConfig,
    "paths": PathsConfig,
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    tuning: TrainRunConfig = field(default_factory=TrainRunConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    inflate: InflateConfig = field(default_factory=InflateConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config sections: {unknown}")
        defaults = cls().to_dict()
        kwargs = {}
        for name, section_cls in SECTIONS.items():
            merged = {**defaults[name], **data.get(name, {})} if isinstance(data.get(name, {}), dict) else data[name]
            kwargs[name] = _strict(section_cls, merged, name)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = section.to_dict() if hasattr(section, "to_dict") else asdict(section)
        return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``"tuning.mode=temporal"`` -> (["tuning", "mode"], "temporal"); values parse as JSON when possible."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def load_run_config(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    data = copy.deepcopy(data)
    for text in overrides:
        keys, value = parse_override(text)
        if len(keys) != 2 or keys[0] not in SECTIONS:
            raise ConfigError(f"override {text!r} must address section.key")
        data.setdefault(keys[0], {})[keys[1]] = value
    return RunConfig.from_dict(data)
