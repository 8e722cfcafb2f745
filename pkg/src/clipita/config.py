"""Run configuration: one JSON file, every field overridable from the CLI."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from clipita.augment import AugmentConfig
from clipita.encoders import ModelConfig
from clipita.loss import LossConfig
from clipita.optim import AGCConfig, ScheduleConfig, TrainConfig

CONFIG_ENV = "CLIPITA_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    propn_threshold: float = 0.8
    min_lang_score: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.propn_threshold <= 1.0:
            raise ValueError("propn_threshold must be in [0, 1]")


@dataclass(frozen=True)
class DataConfig:
    eval_fraction: float = 0.125

    def __post_init__(self):
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must be in (0, 1)")


@dataclass(frozen=True)
class FetchConfig:
    concurrency: int = 8
    timeout_ms: int = 10000

    def __post_init__(self):
        if self.concurrency < 1 or self.timeout_ms < 1:
            raise ValueError("concurrency and timeout_ms must be positive")


SECTIONS: dict[str, type] = {
    "model": ModelConfig,
    "train": TrainConfig,
    "phase1": ScheduleConfig,
    "phase2": ScheduleConfig,
    "agc": AGCConfig,
    "augment": AugmentConfig,
    "loss": LossConfig,
    "filters": FilterConfig,
    "data": DataConfig,
    "fetch": FetchConfig,
}

SECTION_DEFAULTS: dict[str, dict] = {
    "phase1": {"lr_max": 1e-3, "lr_min": 1e-6, "total_steps": 1000, "warmup_phase": True},
    "phase2": {"lr_max": 1e-4, "lr_min": 1e-6, "total_steps": 1000, "warmup_phase": False},
}


@dataclass
class RunConfig:
    seed: int = 0
    paths: dict[str, str] = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    phase1: ScheduleConfig = field(default_factory=lambda: ScheduleConfig(**SECTION_DEFAULTS["phase1"]))
    phase2: ScheduleConfig = field(default_factory=lambda: ScheduleConfig(**SECTION_DEFAULTS["phase2"]))
    agc: AGCConfig = field(default_factory=AGCConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    filters: FilterConfig = field(default_factory=FilterConfig)
    data: DataConfig = field(default_factory=DataConfig)
    fetch: FetchConfig = field(default_factory=FetchConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def section_fields(name: str) -> list[dataclasses.Field]:
    return list(dataclasses.fields(SECTIONS[name]))


def build_config(raw: dict | None = None, overrides: dict[str, dict[str, Any]] | None = None,
                 seed: int | None = None) -> RunConfig:
    """Merge file contents and flag overrides (flags win) into a RunConfig.

    ``seed`` (the global ``--seed`` flag) replaces every per-section seed;
    without it, sections inherit the file's top-level seed unless they set
    their own.

    Unknown sections or keys, and values rejected by a section's own
    validation, raise ``ConfigError``.
    """
    raw = dict(raw or {})
    overrides = overrides or {}
    unknown = set(raw) - set(SECTIONS) - {"seed", "paths"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    base_seed = int(raw.get("seed", 0) if seed is None else seed)
    paths = dict(raw.get("paths", {}))
    paths.update(overrides.get("paths", {}))
    kwargs: dict[str, Any] = {"seed": base_seed, "paths": paths}
    for name, cls in SECTIONS.items():
        known = {f.name for f in dataclasses.fields(cls)}
        values = {"seed": base_seed} if "seed" in known else {}
        values.update(SECTION_DEFAULTS.get(name, {}))
        values.update(raw.get(name, {}))
        values.update(overrides.get(name, {}))
        bad = set(values) - known
        if bad:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
        if seed is not None and "seed" in known:
            values["seed"] = base_seed
        try:
            kwargs[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from exc
    return RunConfig(**kwargs)


def load_config_file(path: str | Path | None) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
