"""Config Service - Run configuration resolution.

This module handles:
- Profile overrides (full-scale defaults vs. the desk-scale profile)
- Loading YAML run files with strict key checking
- Applying CLI flag overrides and keeping derived fields in sync
- Config hashing, run ids, and config.yaml round trips
- The step learning-rate schedule shared by every training stage

Interface Contract:
- resolve_config(path, *, stage, profile, seed, out_dir, run_id, temperature) -> RunConfig
- config_from_dict(data) -> RunConfig
- config_hash(config) -> str (16 hex chars)
- write_config_yaml(config, path) / read_config_yaml(path)
- build_scheduler(optimizer, step_epochs, gamma) -> StepLR, matching lr_at_epoch(...)
- default_run_id(config, variant) -> "<stage>-<hash8>-seed<seed>[-variant]"
- All methods raise ConfigError on failure

Resolution order: dataclass defaults -> profile overrides -> file values -> CLI flags.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
from pathlib import Path
from typing import Any

import torch
import yaml

from src.models import RunConfig
from src.models.run_config import ENCODER_FAMILIES, PROFILES, STAGES

logger = logging.getLogger(__name__)

# Keys that name where a run goes rather than what it computes
_PLACEMENT_KEYS = ("out_dir", "run_id")

TEMPERATURE_GRID = (0.01, 0.02, 0.05, 0.07, 0.1)


class ConfigError(Exception):
    """Raised when a run configuration is malformed or inconsistent."""


# ============================================================================
# Profiles
# ============================================================================

PROFILE_OVERRIDES: dict[str, dict[str, Any]] = {
    "paper": {},
    "desk": {
        "data": {
            "synth": {
                "num_classes": 4,
                "videos_per_class": 50,
                "frames_per_video": 64,
                "frame_size": 36,
            },
        },
        "sampler": {"clip_length": 8, "segments": 4, "max_speed": 4},
        "augment": {"crop_size": 32},
        "encoder": {
            "stem_width": 16,
            "stage_widths": [16, 32, 64, 128],
            "blocks_per_stage": 1,
        },
        "distill": {"bank_size": 1024},
        "optim": {"batch_size": 16, "lr": 0.01, "lr_step_epochs": 10, "epochs": 20},
        "finetune": {"lr": 0.03, "epochs": 10},
    },
}


# ============================================================================
# Merging
# ============================================================================

def _coerce(current: Any, value: Any, where: str) -> Any:
    if dataclasses.is_dataclass(current):
        if not isinstance(value, dict):
            raise ConfigError(f"{where} must be a mapping, got {type(value).__name__}")
        return _merge(current, value, where)
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return tuple(value)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    return value


def _merge(target: Any, overrides: dict[str, Any], prefix: str = "") -> Any:
    """Return a copy of dataclass `target` with `overrides` applied recursively."""
    names = {f.name for f in dataclasses.fields(target)}
    changes = {}
    for key, value in overrides.items():
        where = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError(f"unknown config key {where!r}")
        changes[key] = _coerce(getattr(target, key), value, where)
    return dataclasses.replace(target, **changes)


def sync_derived(config: RunConfig) -> RunConfig:
    """Encoder input shape follows the sampler clip length and the crop size."""
    crop = config.augment.crop_size
    shape = (3, config.sampler.clip_length, crop, crop)
    if tuple(config.encoder.input_shape) == shape:
        return config
    return dataclasses.replace(config, encoder=dataclasses.replace(config.encoder, input_shape=shape))


def validate_config(config: RunConfig) -> None:
    if config.stage not in STAGES:
        raise ConfigError(f"stage must be one of {STAGES}, got {config.stage!r}")
    if config.profile not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}, got {config.profile!r}")
    if config.encoder.family not in ENCODER_FAMILIES:
        raise ConfigError(f"encoder.family must be one of {ENCODER_FAMILIES}, got {config.encoder.family!r}")
    if not config.encoder.stage_widths:
        raise ConfigError("encoder.stage_widths must not be empty")

    sampler = config.sampler
    if sampler.segments < 1 or sampler.max_speed < 1 or sampler.clip_length < 1:
        raise ConfigError("sampler.clip_length, segments and max_speed must be >= 1")
    if sampler.clip_length % sampler.segments != 0:
        raise ConfigError(
            f"sampler.clip_length ({sampler.clip_length}) must be divisible by sampler.segments ({sampler.segments})"
        )

    if config.data.source == "synthetic" and config.augment.crop_size > config.data.synth.frame_size:
        raise ConfigError(
            f"augment.crop_size ({config.augment.crop_size}) exceeds data.synth.frame_size ({config.data.synth.frame_size})"
        )

    distill = config.distill
    if not 0.0 <= distill.momentum <= 1.0:
        raise ConfigError(f"distill.momentum must be in [0, 1], got {distill.momentum}")
    if distill.teacher_temperature <= 0 or distill.student_temperature <= 0:
        raise ConfigError("distill temperatures must be > 0")
    if distill.bank_size < 1:
        raise ConfigError("distill.bank_size must be >= 1")
    if config.vspp.alpha < 0 or config.vspp.beta < 0:
        raise ConfigError("vspp.alpha and vspp.beta must be >= 0")

    optim = config.optim
    if optim.batch_size < 1 or optim.epochs < 1 or config.finetune.epochs < 1:
        raise ConfigError("batch_size and epochs must be >= 1")
    if optim.lr_step_epochs < 1:
        raise ConfigError("optim.lr_step_epochs must be >= 1")
    if config.eval.clips_per_video < 1 or config.eval.topk < 1:
        raise ConfigError("eval.clips_per_video and eval.topk must be >= 1")


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    """Rebuild a fully specified config (e.g. the `config` field of a checkpoint)."""
    return sync_derived(_merge(RunConfig(), data))


def load_config_file(path: Path | str) -> dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping at the top level")
    return data


def resolve_config(
    path: Path | str | None = None,
    *,
    stage: str | None = None,
    profile: str | None = None,
    seed: int | None = None,
    out_dir: str | None = None,
    run_id: str | None = None,
    temperature: float | None = None,
) -> RunConfig:
    """Build the effective RunConfig for one command invocation."""
    file_values = load_config_file(path) if path else {}
    chosen_profile = profile or file_values.get("profile") or "paper"
    if chosen_profile not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}, got {chosen_profile!r}")

    config = _merge(RunConfig(profile=chosen_profile), copy.deepcopy(PROFILE_OVERRIDES[chosen_profile]))
    file_values = {k: v for k, v in file_values.items() if k != "profile"}
    config = _merge(config, file_values)

    flags: dict[str, Any] = {}
    if stage is not None:
        flags["stage"] = stage
    if seed is not None:
        flags["seed"] = seed
    if out_dir is not None:
        flags["out_dir"] = str(out_dir)
    if run_id is not None:
        flags["run_id"] = run_id
    if temperature is not None:
        if temperature not in TEMPERATURE_GRID:
            logger.warning("[CONFIG] Temperature %s is outside the ablation grid %s", temperature, TEMPERATURE_GRID)
        flags["distill"] = {"teacher_temperature": temperature, "student_temperature": temperature}
    config = sync_derived(_merge(config, flags))
    validate_config(config)
    return config


# ============================================================================
# Hashing / persistence
# ============================================================================

def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical JSON of everything except output placement."""
    payload = {k: v for k, v in config.to_dict().items() if k not in _PLACEMENT_KEYS}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def default_run_id(config: RunConfig, variant: str = "") -> str:
    run_id = f"{config.stage}-{config_hash(config)[:8]}-seed{config.seed}"
    return f"{run_id}-{variant}" if variant else run_id


def write_config_yaml(config: RunConfig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = config.to_dict()
    data["config_hash"] = config_hash(config)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f, sort_keys=False)
    return path


def read_config_yaml(path: Path) -> RunConfig:
    data = load_config_file(path)
    data.pop("config_hash", None)
    return config_from_dict(data)


def build_scheduler(optimizer: torch.optim.Optimizer, step_epochs: int, gamma: float) -> torch.optim.lr_scheduler.StepLR:
    """lr is multiplied by gamma every `step_epochs` epochs (scheduler stepped once per epoch)."""
    return torch.optim.lr_scheduler.StepLR(optimizer, step_size=step_epochs, gamma=gamma)


def lr_at_epoch(base_lr: float, epoch: int, step_epochs: int, gamma: float) -> float:
    """Learning rate in effect during 1-based `epoch`."""
    return base_lr * gamma ** ((epoch - 1) // step_epochs)
