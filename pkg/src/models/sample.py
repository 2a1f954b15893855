"""Clip sampling data models.

Pure data structures for VSPP clip plans. The index arithmetic lives in
src.services.sampling_service.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any


@dataclass(frozen=True)
class SamplerParams:
    """Frame counts for one source video and the pace task layout."""
    num_frames: int          # N, frames in the source video
    clip_length: int = 16    # K, frames in the produced clip
    segments: int = 4        # Z
    max_speed: int = 4       # Q
    seed: int = 0

    @property
    def segment_length(self) -> int:
        """Frames per segment (K/Z)."""
        return self.clip_length // self.segments

    def with_num_frames(self, num_frames: int) -> "SamplerParams":
        return SamplerParams(
            num_frames=num_frames,
            clip_length=self.clip_length,
            segments=self.segments,
            max_speed=self.max_speed,
            seed=self.seed,
        )

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return {
            "num_frames": self.num_frames,
            "clip_length": self.clip_length,
            "segments": self.segments,
            "max_speed": self.max_speed,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SamplerParams":
        """Create from dictionary."""
        return cls(
            num_frames=int(data["num_frames"]),
            clip_length=int(data.get("clip_length", 16)),
            segments=int(data.get("segments", 4)),
            max_speed=int(data.get("max_speed", 4)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class VsppSample:
    """A sampled clip plan: which source frames make up the clip, and its labels."""
    lambda_: int                 # speed rate of the altered segment, 1..Q
    zeta: int                    # 1-based index of the altered segment, 1..Z
    f_r: int                     # source start offset
    indices: tuple[int, ...]     # K source frame indices, strictly increasing

    @property
    def speed_label(self) -> int:
        return self.lambda_ - 1

    @property
    def segment_label(self) -> int:
        return self.zeta - 1

    @property
    def clip_length(self) -> int:
        return len(self.indices)

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return {
            "lambda": self.lambda_,
            "zeta": self.zeta,
            "f_r": self.f_r,
            "indices": list(self.indices),
            "speed_label": self.speed_label,
            "segment_label": self.segment_label,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "VsppSample":
        """Create from dictionary."""
        return cls(
            lambda_=int(data["lambda"]),
            zeta=int(data["zeta"]),
            f_r=int(data["f_r"]),
            indices=tuple(int(i) for i in data["indices"]),
        )

    def to_record(self) -> str:
        """One-line text record, as printed by `inspect-sample`."""
        return (
            f"lambda={self.lambda_} zeta={self.zeta} f_r={self.f_r} "
            f"speed_label={self.speed_label} segment_label={self.segment_label} "
            f"indices={','.join(str(i) for i in self.indices)}"
        )

    @classmethod
    def from_record(cls, line: str) -> "VsppSample":
        """Parse a line produced by to_record."""
        fields = dict(part.split("=", 1) for part in line.split())
        return cls(
            lambda_=int(fields["lambda"]),
            zeta=int(fields["zeta"]),
            f_r=int(fields["f_r"]),
            indices=tuple(int(i) for i in fields["indices"].split(",") if i),
        )
