"""Run configuration data models.

Defaults are the full-scale settings (the "paper" profile); the desk profile overrides live in
src.services.config_service. Resolution/merging is done there too.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field as dataclass_field
from typing import Any

from .video import SynthSpec

STAGES = ("aux", "vspp", "finetune", "evaluate")
PROFILES = ("desk", "paper")
ENCODER_FAMILIES = ("plain3d", "factorized2p1d")


@dataclass
class DataConfig:
    """Where videos come from."""
    source: str = "synthetic"        # synthetic | manifest
    manifest: str = ""               # manifest.tsv path when source == manifest
    num_workers: int = 0
    synth: SynthSpec = dataclass_field(default_factory=lambda: SynthSpec(frame_size=128))


@dataclass
class SamplerConfig:
    clip_length: int = 16            # K
    segments: int = 4                # Z
    max_speed: int = 4               # Q
    max_redraws: int = 64


@dataclass
class AugmentPolicy:
    """Spatial augmentation applied per clip (one draw shared by all frames)."""
    crop_size: int = 112
    flip_prob: float = 0.5
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    enabled: bool = True


@dataclass
class EncoderConfig:
    family: str = "plain3d"
    stem_width: int = 64
    stage_widths: tuple[int, ...] = (64, 128, 256, 512)
    blocks_per_stage: int = 2
    # (channels, time, height, width); kept in sync with sampler/augment by config_service
    input_shape: tuple[int, int, int, int] = (3, 16, 112, 112)

    @property
    def embedding_dim(self) -> int:
        return self.stage_widths[-1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "stem_width": self.stem_width,
            "stage_widths": list(self.stage_widths),
            "blocks_per_stage": self.blocks_per_stage,
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EncoderConfig":
        return cls(
            family=str(data["family"]),
            stem_width=int(data["stem_width"]),
            stage_widths=tuple(int(w) for w in data["stage_widths"]),
            blocks_per_stage=int(data["blocks_per_stage"]),
            input_shape=tuple(int(s) for s in data["input_shape"]),
        )


@dataclass
class DistillConfig:
    bank_size: int = 16384           # H
    momentum: float = 0.999          # m
    teacher_temperature: float = 0.02
    student_temperature: float = 0.02
    projection_dim: int = 128
    predictor_hidden: int = 1024


@dataclass
class VsppLossWeights:
    alpha: float = 1.0               # speed
    beta: float = 1.0                # segment


@dataclass
class OptimConfig:
    batch_size: int = 30
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_step_epochs: int = 6
    lr_gamma: float = 0.1
    epochs: int = 20


@dataclass
class FinetuneConfig:
    lr: float = 3e-3
    epochs: int = 25


@dataclass
class EvalProtocol:
    clips_per_video: int = 10
    crop: str = "center"
    aggregation: str = "mean_softmax"
    topk: int = 1


@dataclass
class RunConfig:
    """Everything a command needs. Serialized verbatim into checkpoints and run dirs."""
    stage: str = "aux"
    profile: str = "paper"
    seed: int = 0
    out_dir: str = ""
    run_id: str = ""
    data: DataConfig = dataclass_field(default_factory=DataConfig)
    sampler: SamplerConfig = dataclass_field(default_factory=SamplerConfig)
    augment: AugmentPolicy = dataclass_field(default_factory=AugmentPolicy)
    encoder: EncoderConfig = dataclass_field(default_factory=EncoderConfig)
    distill: DistillConfig = dataclass_field(default_factory=DistillConfig)
    vspp: VsppLossWeights = dataclass_field(default_factory=VsppLossWeights)
    optim: OptimConfig = dataclass_field(default_factory=OptimConfig)
    finetune: FinetuneConfig = dataclass_field(default_factory=FinetuneConfig)
    eval: EvalProtocol = dataclass_field(default_factory=EvalProtocol)

    def to_dict(self) -> dict[str, Any]:
        """Plain nested dict (tuples become lists)."""
        return _listify(asdict(self))


def _listify(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _listify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_listify(v) for v in value]
    return value
