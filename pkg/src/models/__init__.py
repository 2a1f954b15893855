"""Data models - Pure data structures with no business logic."""

from .sample import SamplerParams, VsppSample
from .video import DatasetEntry, SynthSpec, VideoSource
from .run_config import (
    AugmentPolicy,
    DataConfig,
    DistillConfig,
    EncoderConfig,
    EvalProtocol,
    FinetuneConfig,
    OptimConfig,
    RunConfig,
    SamplerConfig,
    VsppLossWeights,
)
from .checkpoint import Checkpoint, EvalResult, VideoPrediction

__all__ = [
    "SamplerParams",
    "VsppSample",
    "DatasetEntry",
    "SynthSpec",
    "VideoSource",
    "AugmentPolicy",
    "DataConfig",
    "DistillConfig",
    "EncoderConfig",
    "EvalProtocol",
    "FinetuneConfig",
    "OptimConfig",
    "RunConfig",
    "SamplerConfig",
    "VsppLossWeights",
    "Checkpoint",
    "EvalResult",
    "VideoPrediction",
]
