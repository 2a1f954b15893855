"""3D encoders and heads for both pretraining stages and finetuning.

Two encoder families share one residual layout (stem + stages of residual blocks
+ global average pooling):
- plain3d         full 3x3x3 convolutions (R3D-style)
- factorized2p1d  each 3D conv split into a spatial (1,d,d) and a temporal (t,1,1) conv,
                  with the intermediate width chosen to match the 3D parameter budget

Heads: projection (D_enc -> projection_dim), a 3-layer MLP predictor used only on
the student path, speed/segment heads for the pace task, and a classifier.
"""

from __future__ import annotations

import copy

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.models import DistillConfig, EncoderConfig


class NetworkError(Exception):
    """Base class for network errors."""


class ShapeMismatchError(NetworkError):
    """Raised when a clip batch does not match the configured input shape."""


class DegenerateVectorError(NetworkError):
    """Raised when an embedding row has (near) zero norm."""


# ============================================================================
# Building blocks
# ============================================================================

def _factorized_width(in_ch: int, out_ch: int, t: int, d: int) -> int:
    return max(1, (t * d * d * in_ch * out_ch) // (d * d * in_ch + t * out_ch))


class Conv2Plus1D(nn.Module):
    """Spatial conv, BN, ReLU, temporal conv."""

    def __init__(self, in_ch: int, out_ch: int, kernel: tuple[int, int, int], stride: tuple[int, int, int]):
        super().__init__()
        t, d, _ = kernel
        mid = _factorized_width(in_ch, out_ch, t, d)
        self.spatial = nn.Conv3d(in_ch, mid, (1, d, d), stride=(1, stride[1], stride[2]), padding=(0, d // 2, d // 2), bias=False)
        self.bn = nn.BatchNorm3d(mid)
        self.temporal = nn.Conv3d(mid, out_ch, (t, 1, 1), stride=(stride[0], 1, 1), padding=(t // 2, 0, 0), bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.temporal(F.relu(self.bn(self.spatial(x))))


def _conv(family: str, in_ch: int, out_ch: int, kernel: tuple[int, int, int], stride: tuple[int, int, int]) -> nn.Module:
    if family == "factorized2p1d":
        return Conv2Plus1D(in_ch, out_ch, kernel, stride)
    padding = tuple(k // 2 for k in kernel)
    return nn.Conv3d(in_ch, out_ch, kernel, stride=stride, padding=padding, bias=False)


class ResBlock3D(nn.Module):
    def __init__(self, family: str, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        strides = (stride, stride, stride)
        self.conv1 = _conv(family, in_ch, out_ch, (3, 3, 3), strides)
        self.bn1 = nn.BatchNorm3d(out_ch)
        self.conv2 = _conv(family, out_ch, out_ch, (3, 3, 3), (1, 1, 1))
        self.bn2 = nn.BatchNorm3d(out_ch)
        if in_ch != out_ch or stride != 1:
            self.down_sample = nn.Sequential(
                nn.Conv3d(in_ch, out_ch, kernel_size=1, stride=strides, bias=False),
                nn.BatchNorm3d(out_ch),
            )
        else:
            self.down_sample = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        branch = F.relu(self.bn1(self.conv1(x)))
        branch = self.bn2(self.conv2(branch))
        if self.down_sample is not None:
            x = self.down_sample(x)
        return F.relu(branch + x)


class Encoder3D(nn.Module):
    """(B, 3, K, H, W) -> (B, D_enc)."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        if config.family not in ("plain3d", "factorized2p1d"):
            raise NetworkError(f"unknown encoder family {config.family!r}")
        self.config = config
        self.stem = nn.Sequential(
            _conv(config.family, config.input_shape[0], config.stem_width, (3, 7, 7), (1, 2, 2)),
            nn.BatchNorm3d(config.stem_width),
            nn.ReLU(inplace=True),
        )
        stages = []
        in_ch = config.stem_width
        for i, width in enumerate(config.stage_widths):
            blocks = []
            for b in range(config.blocks_per_stage):
                stride = 2 if (i > 0 and b == 0) else 1
                blocks.append(ResBlock3D(config.family, in_ch, width, stride))
                in_ch = width
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.Sequential(*stages)
        self.pool = nn.AdaptiveAvgPool3d(1)

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        expected = tuple(self.config.input_shape)
        if x.dim() != 5 or tuple(x.shape[1:]) != expected:
            raise ShapeMismatchError(f"expected clips of shape (B, {', '.join(map(str, expected))}), got {tuple(x.shape)}")
        x = self.stages(self.stem(x))
        return self.pool(x).flatten(1)


# ============================================================================
# Heads
# ============================================================================

class PredictorMLP(nn.Module):
    """3-layer MLP: Linear-BN-ReLU, Linear-BN-ReLU, Linear."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.BatchNorm1d(hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, hidden),
            nn.BatchNorm1d(hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class StudentNetwork(nn.Module):
    """encoder -> projection -> predictor (outputs are not normalized)."""

    def __init__(self, encoder: Encoder3D, projection: nn.Linear, predictor: PredictorMLP):
        super().__init__()
        self.encoder = encoder
        self.projection = projection
        self.predictor = predictor

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.predictor(self.projection(self.encoder(x)))


class TeacherNetwork(nn.Module):
    """encoder -> projection. Parameters never require grad."""

    def __init__(self, encoder: Encoder3D, projection: nn.Linear):
        super().__init__()
        self.encoder = encoder
        self.projection = projection

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.projection(self.encoder(x))


class VsppHeads(nn.Module):
    """Speed head (Q classes) and segment head (Z classes; absent when Z == 1)."""

    def __init__(self, embedding_dim: int, max_speed: int, segments: int):
        super().__init__()
        self.speed = nn.Linear(embedding_dim, max_speed)
        self.segment = nn.Linear(embedding_dim, segments) if segments > 1 else None

    def forward(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        segment = self.segment(features) if self.segment is not None else None
        return self.speed(features), segment


class VsppNetwork(nn.Module):
    def __init__(self, encoder: Encoder3D, heads: VsppHeads):
        super().__init__()
        self.encoder = encoder
        self.heads = heads

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        return self.heads(self.encoder(x))


class ClassifierNetwork(nn.Module):
    def __init__(self, encoder: Encoder3D, num_classes: int):
        super().__init__()
        self.encoder = encoder
        self.classifier = nn.Linear(encoder.embedding_dim, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.encoder(x))


# ============================================================================
# Functions
# ============================================================================

def encode(encoder: Encoder3D, clip_batch: torch.Tensor) -> torch.Tensor:
    """Embeddings (B, D_enc). Deterministic when the encoder is in eval mode."""
    return encoder(clip_batch)


def l2_normalize(vectors: torch.Tensor, min_norm: float = 1e-12) -> torch.Tensor:
    """Row-wise unit vectors.

    Raises:
        DegenerateVectorError: a row norm is below min_norm (collapsed embedding)
    """
    norms = vectors.norm(dim=-1, keepdim=True)
    if bool((norms < min_norm).any()):
        bad = int((norms.squeeze(-1) < min_norm).nonzero()[0, 0]) if vectors.dim() > 1 else 0
        raise DegenerateVectorError(f"embedding row {bad} has norm {float(norms.flatten()[bad]):.3e}; representation collapsed")
    return vectors / norms


def count_parameters(module: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def build_encoder(config: EncoderConfig, seed: int) -> Encoder3D:
    """Seeded encoder init that leaves the global RNG untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Encoder3D(config)


def build_linear(in_dim: int, out_dim: int, seed: int) -> nn.Linear:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return nn.Linear(in_dim, out_dim)


def init_from_scratch(
    encoder_config: EncoderConfig,
    distill_config: DistillConfig,
    seed: int,
) -> tuple[StudentNetwork, TeacherNetwork]:
    """One random init, copied: the teacher starts equal to the student's encoder+projection."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        encoder = Encoder3D(encoder_config)
        projection = nn.Linear(encoder.embedding_dim, distill_config.projection_dim)
        predictor = PredictorMLP(distill_config.projection_dim, distill_config.predictor_hidden)
    student = StudentNetwork(encoder, projection, predictor)
    teacher = TeacherNetwork(copy.deepcopy(encoder), copy.deepcopy(projection))
    for param in teacher.parameters():
        param.requires_grad_(False)
    return student, teacher
