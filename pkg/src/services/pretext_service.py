"""Pretext Service - Segment pace prediction (primary pretraining stage).

This module handles:
- The joint loss alpha * CE(speed) + beta * CE(segment)
- One training step over a batch of VSPP clips
- Building the pace network from stage-1 weights (fresh heads) or from scratch

Interface Contract:
- vspp_loss(speed_logits, segment_logits, speed_labels, segment_labels, weights) -> (total, speed, segment)
- vspp_train_step(model, clips, speed_labels, segment_labels, weights, optimizer) -> VsppStepResult
- load_stage1_weights(checkpoint, encoder_config, max_speed, segments, seed) -> VsppNetwork
- All methods raise PretextError subclasses on failure

With segments == 1 the segment head is absent and the loss is speed-only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from src.models import Checkpoint, EncoderConfig, VsppLossWeights
from src.networks import VsppHeads, VsppNetwork, build_encoder
from src.services.checkpoint_service import encoder_state_from_checkpoint

logger = logging.getLogger(__name__)


class PretextError(Exception):
    """Base class for pace-task errors."""


class LogitShapeError(PretextError):
    """Raised when logits and labels do not line up."""


class LabelOutOfRangeError(PretextError):
    """Raised when a label is outside [0, num_classes)."""


def _check_head(name: str, logits: torch.Tensor, labels: torch.Tensor) -> None:
    if logits.dim() != 2 or labels.dim() != 1 or logits.shape[0] != labels.shape[0]:
        raise LogitShapeError(f"{name}: logits {tuple(logits.shape)} do not match labels {tuple(labels.shape)}")
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= logits.shape[1]):
        raise LabelOutOfRangeError(f"{name}: labels must be in [0, {logits.shape[1] - 1}], got [{int(labels.min())}, {int(labels.max())}]")


def vspp_loss(
    speed_logits: torch.Tensor,
    segment_logits: torch.Tensor | None,
    speed_labels: torch.Tensor,
    segment_labels: torch.Tensor,
    weights: VsppLossWeights,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Joint cross-entropy. Returns (total, speed component, segment component)."""
    if weights.alpha < 0 or weights.beta < 0:
        raise PretextError(f"loss weights must be >= 0, got alpha={weights.alpha}, beta={weights.beta}")
    _check_head("speed", speed_logits, speed_labels)
    speed = F.cross_entropy(speed_logits, speed_labels)
    if segment_logits is None:
        segment = speed_logits.new_zeros(())
    else:
        _check_head("segment", segment_logits, segment_labels)
        segment = F.cross_entropy(segment_logits, segment_labels)
    total = weights.alpha * speed + weights.beta * segment
    return total, speed, segment


@dataclass
class VsppStepResult:
    total: float
    speed_loss: float
    segment_loss: float
    speed_correct: int
    segment_correct: int
    batch_size: int


def vspp_train_step(
    model: VsppNetwork,
    clips: torch.Tensor,
    speed_labels: torch.Tensor,
    segment_labels: torch.Tensor,
    weights: VsppLossWeights,
    optimizer: torch.optim.Optimizer,
) -> VsppStepResult:
    """Single forward through encoder and both heads, joint backward, one SGD step.

    With alpha == beta == 0 there is nothing to optimize and parameters are left untouched.
    """
    model.train()
    speed_logits, segment_logits = model(clips)
    total, speed, segment = vspp_loss(speed_logits, segment_logits, speed_labels, segment_labels, weights)

    if weights.alpha == 0 and weights.beta == 0:
        logger.debug("[VSPP] alpha == beta == 0, skipping optimizer step")
    else:
        optimizer.zero_grad(set_to_none=True)
        total.backward()
        optimizer.step()

    with torch.no_grad():
        speed_correct = int((speed_logits.argmax(dim=1) == speed_labels).sum())
        segment_correct = (
            int((segment_logits.argmax(dim=1) == segment_labels).sum()) if segment_logits is not None else 0
        )
    return VsppStepResult(
        total=float(total.detach()),
        speed_loss=float(speed.detach()),
        segment_loss=float(segment.detach()),
        speed_correct=speed_correct,
        segment_correct=segment_correct,
        batch_size=int(clips.shape[0]),
    )


@torch.no_grad()
def vspp_eval_batch(model: VsppNetwork, clips: torch.Tensor, speed_labels: torch.Tensor, segment_labels: torch.Tensor) -> tuple[int, int]:
    """(speed correct, segment correct) in inference mode."""
    model.eval()
    speed_logits, segment_logits = model(clips)
    speed_correct = int((speed_logits.argmax(dim=1) == speed_labels).sum())
    segment_correct = int((segment_logits.argmax(dim=1) == segment_labels).sum()) if segment_logits is not None else 0
    return speed_correct, segment_correct


def build_vspp_network(encoder_config: EncoderConfig, max_speed: int, segments: int, seed: int) -> VsppNetwork:
    """Scratch network (the arm without the auxiliary stage)."""
    encoder = build_encoder(encoder_config, seed)
    return VsppNetwork(encoder, _fresh_heads(encoder.embedding_dim, max_speed, segments, seed))


def _fresh_heads(embedding_dim: int, max_speed: int, segments: int, seed: int) -> VsppHeads:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed + 1)
        return VsppHeads(embedding_dim, max_speed, segments)


def load_stage1_weights(
    checkpoint: Checkpoint,
    encoder_config: EncoderConfig,
    max_speed: int,
    segments: int,
    seed: int,
) -> VsppNetwork:
    """Copy the student's convolutional weights; projection and predictor are dropped
    and speed/segment heads are freshly initialized from `seed`.

    Raises:
        ConfigMismatchError: checkpoint encoder differs from encoder_config
        CorruptCheckpointError: no encoder weights in the checkpoint
    """
    state = encoder_state_from_checkpoint(checkpoint, encoder_config)
    encoder = build_encoder(encoder_config, seed)
    encoder.load_state_dict(state)
    logger.info("[VSPP] Loaded encoder from %s checkpoint (epoch %s)", checkpoint.stage, checkpoint.epoch)
    return VsppNetwork(encoder, _fresh_heads(encoder.embedding_dim, max_speed, segments, seed))
