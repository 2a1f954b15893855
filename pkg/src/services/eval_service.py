"""Eval Service - Downstream finetuning and the multi-clip evaluation protocol.

This module handles:
- Finetuning an encoder with a fresh classifier on labelled videos
- Per-video prediction: uniformly spaced natural-pace clips, center crop,
  softmax averaged over clips, argmax with lowest-index tie-break
- Top-k accuracy over a split

Interface Contract:
- clip_offsets(num_frames, clip_length, clips) -> list[int]
- finetune(encoder, videos, config, num_classes, ...) -> (ClassifierNetwork, history)
- evaluate_video(model, video, protocol, clip_length, crop_size) -> VideoPrediction
- topk_accuracy(probabilities, labels, k) -> float
- evaluate_dataset(model, videos, protocol, clip_length, crop_size, split) -> EvalResult
- All methods raise EvalError subclasses on failure
"""

from __future__ import annotations

import logging
from typing import Any, Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader
from tqdm import tqdm

import config
from src.datasets import EpochPermutationSampler, FinetuneClipDataset
from src.models import EvalProtocol, EvalResult, RunConfig, SamplerParams, VideoPrediction, VideoSource
from src.networks import ClassifierNetwork, Encoder3D, build_linear
from src.services.augment_service import center_crop
from src.services.config_service import build_scheduler
from src.services.dataio_service import decode_clip
from src.services.sampling_service import uniform_pace_indices

logger = logging.getLogger(__name__)

EpochCallback = Callable[[int, ClassifierNetwork, torch.optim.Optimizer, Any, dict[str, Any]], None]


class EvalError(Exception):
    """Base class for evaluation errors."""


class TooShortError(EvalError):
    """Raised when a video has fewer frames than one clip."""


class LengthMismatchError(EvalError):
    """Raised when predictions and labels differ in length."""


# ============================================================================
# Finetuning
# ============================================================================

def build_classifier(encoder: Encoder3D, num_classes: int, seed: int) -> ClassifierNetwork:
    """Encoder plus a classifier initialized from `seed`; every layer trainable."""
    model = ClassifierNetwork(encoder, num_classes)
    model.classifier = build_linear(encoder.embedding_dim, num_classes, seed + 2)
    for param in model.parameters():
        param.requires_grad_(True)
    return model


def finetune(
    encoder: Encoder3D,
    videos: Sequence[VideoSource],
    run_config: RunConfig,
    num_classes: int,
    *,
    on_epoch: EpochCallback | None = None,
    resume: dict[str, Any] | None = None,
) -> tuple[ClassifierNetwork, list[dict[str, Any]]]:
    """Train encoder + classifier with cross-entropy.

    Same augmentation, optimizer and step schedule as pretraining, with the
    finetune learning rate and epoch count. `resume` holds the model, optimizer and
    scheduler state dicts plus the last finished `epoch`.

    Returns:
        (model, history) with one history row per epoch run here
    """
    if not videos:
        raise EvalError("no labelled videos to finetune on")
    optim = run_config.optim
    model = build_classifier(encoder, num_classes, run_config.seed)
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=run_config.finetune.lr,
        momentum=optim.momentum,
        weight_decay=optim.weight_decay,
    )
    scheduler = build_scheduler(optimizer, optim.lr_step_epochs, optim.lr_gamma)

    start_epoch = 1
    if resume is not None:
        model.load_state_dict(resume["model"])
        optimizer.load_state_dict(resume["optimizer"])
        scheduler.load_state_dict(resume["scheduler"])
        start_epoch = int(resume["epoch"]) + 1

    dataset = FinetuneClipDataset(videos, run_config.sampler, run_config.augment, run_config.seed)
    order = EpochPermutationSampler(len(dataset), run_config.seed)
    loader = DataLoader(dataset, batch_size=optim.batch_size, sampler=order, num_workers=run_config.data.num_workers)

    history: list[dict[str, Any]] = []
    for epoch in range(start_epoch, run_config.finetune.epochs + 1):
        dataset.set_epoch(epoch)
        order.set_epoch(epoch)
        lr = optimizer.param_groups[0]["lr"]
        model.train()
        loss_sum, correct, seen = 0.0, 0, 0
        for clips, labels in tqdm(loader, desc=f"finetune {epoch}", leave=False, disable=not config.SHOW_PROGRESS):
            logits = model(clips)
            loss = F.cross_entropy(logits, labels)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            loss_sum += float(loss.detach()) * labels.shape[0]
            correct += int((logits.detach().argmax(dim=1) == labels).sum())
            seen += labels.shape[0]
        scheduler.step()

        row = {"epoch": epoch, "loss": loss_sum / seen, "train_acc": correct / seen, "lr": lr}
        history.append(row)
        logger.info("[FINETUNE] Epoch %s: loss=%.4f train_acc=%.3f lr=%s", epoch, row["loss"], row["train_acc"], lr)
        if on_epoch is not None:
            on_epoch(epoch, model, optimizer, scheduler, row)
    return model, history


# ============================================================================
# Evaluation protocol
# ============================================================================

def clip_offsets(num_frames: int, clip_length: int, clips: int) -> list[int]:
    """Start offsets round(i * (N - K) / (clips - 1)), halves rounded up."""
    if num_frames < clip_length:
        raise TooShortError(f"video has N={num_frames} frames, fewer than clip length K={clip_length}")
    span = num_frames - clip_length
    if clips == 1:
        return [0]
    return [(2 * i * span + clips - 1) // (2 * (clips - 1)) for i in range(clips)]


def _argmax_lowest(probabilities: np.ndarray) -> int:
    # np.argmax returns the first maximal index
    return int(np.argmax(probabilities))


@torch.no_grad()
def evaluate_video(
    model: ClassifierNetwork,
    video: VideoSource,
    protocol: EvalProtocol,
    clip_length: int,
    crop_size: int,
) -> VideoPrediction:
    """Averaged-softmax prediction over `protocol.clips_per_video` natural-pace clips.

    Raises:
        TooShortError: N < K
    """
    model.eval()
    params = SamplerParams(num_frames=video.num_frames, clip_length=clip_length, segments=1, max_speed=1)
    clips = [
        center_crop(decode_clip(video, uniform_pace_indices(params, 1, f_r)), crop_size)
        for f_r in clip_offsets(video.num_frames, clip_length, protocol.clips_per_video)
    ]
    logits = model(torch.stack(clips))
    per_clip = F.softmax(logits.to(torch.float64), dim=1)
    # mean taken as offsets from the first clip: identical clips give that clip's softmax bit for bit
    first = per_clip[0]
    probabilities = (first + (per_clip - first).sum(dim=0) / per_clip.shape[0]).numpy()
    return VideoPrediction(
        video_id=video.id,
        predicted=_argmax_lowest(probabilities),
        probabilities=probabilities.tolist(),
        label=video.label,
    )


def topk_accuracy(probabilities: Sequence[Sequence[float]], labels: Sequence[int], k: int) -> float:
    """Fraction of rows whose label is among the k most probable classes."""
    if len(probabilities) != len(labels):
        raise LengthMismatchError(f"{len(probabilities)} predictions vs {len(labels)} labels")
    if not labels:
        raise EvalError("no predictions to score")
    if k < 1:
        raise EvalError(f"k must be >= 1, got {k}")
    hits = 0
    for probs, label in zip(probabilities, labels):
        top = np.argsort(-np.asarray(probs, dtype=np.float64), kind="stable")[:k]
        hits += int(label in top.tolist())
    return hits / len(labels)


def evaluate_dataset(
    model: ClassifierNetwork,
    videos: Sequence[VideoSource],
    protocol: EvalProtocol,
    clip_length: int,
    crop_size: int,
    split: str,
) -> EvalResult:
    if not videos:
        raise EvalError(f"split {split!r} has no videos")
    predictions = []
    for video in tqdm(videos, desc=f"eval {split}", leave=False, disable=not config.SHOW_PROGRESS):
        if video.label is None:
            raise EvalError(f"video {video.id} has no label")
        predictions.append(evaluate_video(model, video, protocol, clip_length, crop_size))
    probabilities = [p.probabilities for p in predictions]
    labels = [p.label for p in predictions]
    result = EvalResult(
        split=split,
        top1=topk_accuracy(probabilities, labels, 1),
        topk=topk_accuracy(probabilities, labels, protocol.topk),
        k=protocol.topk,
        predictions=predictions,
    )
    logger.info("[EVAL] %s: top1=%.4f over %s videos", split, result.top1, len(predictions))
    return result
