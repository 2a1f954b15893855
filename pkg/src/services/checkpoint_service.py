"""Checkpoint Service - Saving, loading and handing weights between stages.

This module handles:
- Atomic checkpoint writes (temp file + replace, retried on transient OSError)
- Loading with format-version and structure checks
- Capturing/restoring RNG state for exact resume
- Extracting encoder weights from any stage's checkpoint

Interface Contract:
- save_checkpoint(checkpoint, path) -> Path
- load_checkpoint(path) -> Checkpoint
- encoder_state_from_checkpoint(checkpoint, encoder_config) -> state_dict
- All methods raise CheckpointError subclasses on failure
"""

from __future__ import annotations

import logging
import os
import random
from pathlib import Path
from typing import Any

import numpy as np
import torch
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

import config
from src.models import Checkpoint, EncoderConfig

logger = logging.getLogger(__name__)

# Module names searched (in order) for encoder weights
ENCODER_SOURCES = ("vspp", "student", "classifier")


class CheckpointError(Exception):
    """Base class for checkpoint errors."""


class CheckpointNotFoundError(CheckpointError):
    """Raised when the checkpoint path does not exist."""


class CorruptCheckpointError(CheckpointError):
    """Raised when a checkpoint cannot be decoded or lacks required fields."""


class ConfigMismatchError(CheckpointError):
    """Raised when checkpoint weights were built for a different encoder."""


@retry(
    stop=stop_after_attempt(config.IO_RETRY_ATTEMPTS),
    wait=wait_exponential(multiplier=0.05, max=1),
    retry=retry_if_exception_type(OSError),
    reraise=True,
)
def _replace(src: Path, dst: Path) -> None:
    os.replace(src, dst)


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    """Write atomically; readers never see a half-written file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(checkpoint.to_dict(), tmp)
    _replace(tmp, path)
    logger.info("[CKPT] Saved %s checkpoint (epoch %s, step %s) to %s", checkpoint.stage, checkpoint.epoch, checkpoint.step, path)
    return path


def load_checkpoint(path: Path | str) -> Checkpoint:
    """Load and validate a checkpoint.

    Raises:
        CheckpointNotFoundError: path does not exist
        CorruptCheckpointError: undecodable payload or missing fields
        CheckpointError: unsupported format version
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CorruptCheckpointError(f"cannot decode checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise CorruptCheckpointError(f"checkpoint {path} does not hold a dict payload")
    try:
        checkpoint = Checkpoint.from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"checkpoint {path} is missing field {exc}") from exc
    if checkpoint.format_version != config.CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {checkpoint.format_version}, "
            f"this build reads version {config.CHECKPOINT_FORMAT_VERSION}"
        )
    return checkpoint


def capture_rng_state() -> dict[str, Any]:
    return {
        "python": random.getstate(),
        "numpy": np.random.get_state(),
        "torch_cpu": torch.get_rng_state(),
    }


def restore_rng_state(state: dict[str, Any] | None) -> None:
    if not isinstance(state, dict):
        return
    if state.get("python") is not None:
        random.setstate(state["python"])
    if state.get("numpy") is not None:
        np.random.set_state(state["numpy"])
    if state.get("torch_cpu") is not None:
        torch.set_rng_state(state["torch_cpu"])


def encoder_state_from_checkpoint(checkpoint: Checkpoint, encoder_config: EncoderConfig) -> dict[str, torch.Tensor]:
    """Encoder weights (prefix stripped) from an aux, vspp or finetune checkpoint."""
    expected = encoder_config.to_dict()
    if checkpoint.encoder_config != expected:
        diffs = {
            key: (checkpoint.encoder_config.get(key), value)
            for key, value in expected.items()
            if checkpoint.encoder_config.get(key) != value
        }
        raise ConfigMismatchError(f"checkpoint encoder differs from configured encoder (checkpoint, config): {diffs}")
    for source in ENCODER_SOURCES:
        module_state = checkpoint.state.get(source)
        if not module_state:
            continue
        encoder_state = {
            key[len("encoder."):]: value for key, value in module_state.items() if key.startswith("encoder.")
        }
        if encoder_state:
            return encoder_state
    raise CorruptCheckpointError(f"{checkpoint.stage} checkpoint holds no encoder weights (looked in {ENCODER_SOURCES})")
