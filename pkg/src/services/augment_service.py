"""Augment Service - Spatial clip augmentation.

This module handles:
- Random crop + horizontal flip + color jitter for training clips
- Deterministic center crop for evaluation

Interface Contract:
- augment_clip(clip, policy, view_key) -> torch.Tensor
- center_crop(clip, crop_size) -> torch.Tensor
- All methods raise AugmentError subclasses on failure

Clips are (C, T, H, W) float tensors in [0, 1]. One crop window, one flip
decision and one jitter draw are made per clip and applied to every frame, so
augmentation never adds temporal signal. Temporal order is never touched.
"""

from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np
import torch
import torchvision.transforms.functional as TF

from src.models import AugmentPolicy

ViewKey = Sequence[int | str]


class AugmentError(Exception):
    """Base class for augmentation errors."""


class TooSmallError(AugmentError):
    """Raised when the clip is smaller than the crop."""


def view_key_seed(view_key: ViewKey) -> list[int]:
    """Entropy for np.random.default_rng from a key like (seed, epoch, video_id, view)."""
    entropy = []
    for part in view_key:
        if isinstance(part, str):
            entropy.append(zlib.crc32(part.encode("utf-8")))
        else:
            entropy.append(int(part) & 0xFFFFFFFF)
    return entropy


def _check_size(clip: torch.Tensor, crop_size: int) -> tuple[int, int]:
    if clip.dim() != 4:
        raise AugmentError(f"expected a (C, T, H, W) clip, got shape {tuple(clip.shape)}")
    height, width = clip.shape[-2:]
    if height < crop_size or width < crop_size:
        raise TooSmallError(f"clip is {height}x{width}, smaller than crop {crop_size}")
    return height, width


def center_crop(clip: torch.Tensor, crop_size: int) -> torch.Tensor:
    """Spatially centered crop_size x crop_size window."""
    height, width = _check_size(clip, crop_size)
    top = (height - crop_size) // 2
    left = (width - crop_size) // 2
    return clip[..., top:top + crop_size, left:left + crop_size]


def _jitter(frames: torch.Tensor, policy: AugmentPolicy, rng: np.random.Generator) -> torch.Tensor:
    """Color jitter on (T, 3, H, W) with one parameter draw for all frames."""
    factors = {
        "brightness": float(rng.uniform(max(0.0, 1 - policy.brightness), 1 + policy.brightness)),
        "contrast": float(rng.uniform(max(0.0, 1 - policy.contrast), 1 + policy.contrast)),
        "saturation": float(rng.uniform(max(0.0, 1 - policy.saturation), 1 + policy.saturation)),
        "hue": float(rng.uniform(-policy.hue, policy.hue)),
    }
    for name in rng.permutation(list(factors)):
        value = factors[str(name)]
        if name == "brightness":
            frames = TF.adjust_brightness(frames, value)
        elif name == "contrast":
            frames = TF.adjust_contrast(frames, value)
        elif name == "saturation":
            frames = TF.adjust_saturation(frames, value)
        elif policy.hue > 0:
            frames = TF.adjust_hue(frames, value)
    return frames


def augment_clip(clip: torch.Tensor, policy: AugmentPolicy, view_key: ViewKey) -> torch.Tensor:
    """Apply the policy to one clip. Same (clip, policy, view_key) -> same output.

    Raises:
        TooSmallError: clip spatial dims below policy.crop_size
    """
    if not policy.enabled:
        return center_crop(clip, policy.crop_size)

    height, width = _check_size(clip, policy.crop_size)
    rng = np.random.default_rng(view_key_seed(view_key))
    size = policy.crop_size
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    flip = bool(rng.random() < policy.flip_prob)

    out = clip[..., top:top + size, left:left + size]
    if flip:
        out = torch.flip(out, dims=[-1])

    frames = out.permute(1, 0, 2, 3)  # (T, C, H, W) for torchvision
    frames = _jitter(frames, policy, rng)
    return frames.permute(1, 0, 2, 3).clamp(0.0, 1.0).contiguous()
