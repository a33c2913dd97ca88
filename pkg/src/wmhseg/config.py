"""One JSON config schema shared by every command, with scale presets.

A config is a dict with optional sections ``phantom``, ``train``, ``model``
and ``inference`` plus top-level ``seed``, ``scale``, ``data_dir``,
``input_config`` and ``task``. Values given explicitly override the preset
of the chosen scale.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .core.types import InputConfig, TaskSpec
from .data.augment import AugmentConfig
from .data.phantom import PhantomSpec
from .model import ModelConfig
from .training import TrainConfig

SCALES = {
    "tiny": {
        "phantom": {"shape": [32, 32, 32], "count": 4, "test_count": 2, "region_count": 6},
        "train": {"epochs": 2, "batches_per_epoch": 2, "batch_size": 2, "patch_size": [16, 32, 32],
                  "lr": 0.05, "augment": {"probability": 0.2, "elastic": False, "motion": False}},
        "model": {"depth": 2, "base_filters": 4},
        "inference": {"window": [16, 32, 32], "overlap": 0.5},
    },
    "desk": {
        "phantom": {"shape": [48, 48, 48], "count": 8, "test_count": 4},
        "train": {"epochs": 80, "batches_per_epoch": 10, "batch_size": 2, "patch_size": [16, 48, 48],
                  "lr": 0.05, "fg_bias": 0.7,
                  "augment": {"probability": 0.2, "elastic": False, "motion": False}},
        "model": {"depth": 3, "base_filters": 8},
        "inference": {"window": [16, 48, 48], "overlap": 0.5},
    },
    "full": {
        "phantom": {"shape": [64, 160, 160], "count": 20, "test_count": 10},
        "train": {"epochs": 1000, "batches_per_epoch": 250, "batch_size": 12, "patch_size": [32, 128, 128],
                  "lr": 0.001},
        "model": {"depth": 4, "base_filters": 16},
        "inference": {"window": [32, 128, 128], "overlap": 0.5},
    },
}

DEFAULTS = {"seed": 0, "scale": "desk", "data_dir": None, "input_config": "CONCAT", "task": "LESION",
            "phantom": {}, "train": {}, "model": {}, "inference": {}}

SECTIONS = ("phantom", "train", "model", "inference")


class ConfigError(ValueError):
    """Malformed or unknown config content (a usage error)."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Resolve a config file plus command-line overrides against the scale preset."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
    user = _merge(user, {k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    scale = user.get("scale", DEFAULTS["scale"])
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; choose from {sorted(SCALES)}")
    cfg = _merge(_merge(DEFAULTS, SCALES[scale]), user)
    try:
        InputConfig.parse(cfg["input_config"])
        TaskSpec.of(cfg["task"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid input_config/task: {exc}") from exc
    return cfg


def phantom_spec(cfg: dict) -> tuple[PhantomSpec, int, int]:
    """PhantomSpec plus train/test subject counts."""
    section = dict(cfg["phantom"])
    count = int(section.pop("count", 8))
    test_count = int(section.pop("test_count", 0))
    section.setdefault("seed", cfg["seed"])
    try:
        return PhantomSpec(**section), count, test_count
    except TypeError as exc:
        raise ConfigError(f"bad phantom section: {exc}") from exc


def train_config(cfg: dict, input_config=None, task=None) -> TrainConfig:
    section = dict(cfg["train"])
    section.setdefault("seed", cfg["seed"])
    section["input_config"] = input_config or cfg["input_config"]
    section["task"] = task or cfg["task"]
    if isinstance(section.get("augment"), dict):
        section["augment"] = AugmentConfig(**section["augment"])
    try:
        return TrainConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad train section: {exc}") from exc


def model_config(cfg: dict, input_config, task) -> ModelConfig:
    input_config = InputConfig.parse(input_config)
    try:
        return ModelConfig(input_config.in_channels, TaskSpec.of(task).num_classes, **cfg["model"])
    except TypeError as exc:
        raise ConfigError(f"bad model section: {exc}") from exc
