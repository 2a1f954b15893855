"""Checkpoint and evaluation result data models."""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Any


@dataclass
class Checkpoint:
    """Everything needed to resume a stage or hand weights to the next one."""
    format_version: int
    stage: str
    encoder_config: dict[str, Any]
    config: dict[str, Any]
    config_hash: str
    state: dict[str, dict[str, Any]]            # module name -> state_dict
    optimizer: dict[str, Any] | None = None
    scheduler: dict[str, Any] | None = None
    bank: dict[str, Any] | None = None           # aux stage only
    rng: dict[str, Any] = dataclass_field(default_factory=dict)
    epoch: int = 0
    step: int = 0

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary (the on-disk payload)."""
        return {
            "format_version": self.format_version,
            "stage": self.stage,
            "encoder_config": self.encoder_config,
            "config": self.config,
            "config_hash": self.config_hash,
            "state": self.state,
            "optimizer": self.optimizer,
            "scheduler": self.scheduler,
            "bank": self.bank,
            "rng": self.rng,
            "epoch": self.epoch,
            "step": self.step,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Checkpoint":
        """Create from dictionary. Raises KeyError on missing required fields."""
        return cls(
            format_version=int(data["format_version"]),
            stage=str(data["stage"]),
            encoder_config=data["encoder_config"],
            config=data["config"],
            config_hash=str(data["config_hash"]),
            state=data["state"],
            optimizer=data.get("optimizer"),
            scheduler=data.get("scheduler"),
            bank=data.get("bank"),
            rng=data.get("rng", {}),
            epoch=int(data.get("epoch", 0)),
            step=int(data.get("step", 0)),
        )


@dataclass
class VideoPrediction:
    """Aggregated prediction for one video under the multi-clip protocol."""
    video_id: str
    predicted: int
    probabilities: list[float]
    label: int | None = None

    @property
    def correct(self) -> bool:
        return self.label is not None and self.predicted == self.label


@dataclass
class EvalResult:
    """Accuracy over a dataset split."""
    split: str
    top1: float
    topk: float
    k: int
    predictions: list[VideoPrediction] = dataclass_field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "split": self.split,
            "top1": self.top1,
            "topk": self.topk,
            "k": self.k,
            "num_videos": len(self.predictions),
        }
