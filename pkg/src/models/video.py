"""Video data models.

Pure data structures describing video sources and synthetic dataset specs.
Frame readers are injected by src.services.dataio_service.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Any, Callable

import numpy as np

FrameReader = Callable[[int], np.ndarray]

MOTION_KINDS = ("linear", "circular", "oscillating")
SHAPES = ("circle", "square", "triangle")
SPLITS = ("train", "val", "test")


@dataclass
class VideoSource:
    """A video with N frames, fetched lazily through `reader`."""
    id: str
    num_frames: int
    height: int
    width: int
    channels: int = 3
    label: int | None = None
    split: str = "train"
    path: str = ""
    reader: FrameReader | None = dataclass_field(default=None, repr=False, compare=False)

    def get_frame(self, index: int) -> np.ndarray:
        """Return frame `index` as uint8 (H, W, 3) RGB."""
        if not 0 <= index < self.num_frames:
            raise IndexError(f"frame {index} outside [0, {self.num_frames - 1}] for video {self.id}")
        if self.reader is None:
            raise RuntimeError(f"video {self.id} has no frame reader attached")
        return self.reader(index)

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary (reader excluded)."""
        return {
            "id": self.id,
            "num_frames": self.num_frames,
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "label": self.label,
            "split": self.split,
            "path": self.path,
        }


@dataclass(frozen=True)
class SynthSpec:
    """Spec for the moving-shapes dataset. Class c is the pair
    (SHAPES[c // len(motion_kinds)], motion_kinds[c % len(motion_kinds)])."""
    num_classes: int = 4
    videos_per_class: int = 50
    frames_per_video: int = 64
    frame_size: int = 36
    motion_kinds: tuple[str, ...] = MOTION_KINDS
    base_speed_range: tuple[float, float] = (1.0, 2.0)
    object_radius: int = 5
    noise_amplitude: float = 4.0
    seed: int = 0

    @property
    def num_videos(self) -> int:
        return self.num_classes * self.videos_per_class

    def class_pair(self, label: int) -> tuple[str, str]:
        """(shape, motion_kind) for a class id."""
        kinds = len(self.motion_kinds)
        return SHAPES[label // kinds], self.motion_kinds[label % kinds]

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return {
            "num_classes": self.num_classes,
            "videos_per_class": self.videos_per_class,
            "frames_per_video": self.frames_per_video,
            "frame_size": self.frame_size,
            "motion_kinds": list(self.motion_kinds),
            "base_speed_range": list(self.base_speed_range),
            "object_radius": self.object_radius,
            "noise_amplitude": self.noise_amplitude,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SynthSpec":
        """Create from dictionary."""
        defaults = cls()
        return cls(
            num_classes=int(data.get("num_classes", defaults.num_classes)),
            videos_per_class=int(data.get("videos_per_class", defaults.videos_per_class)),
            frames_per_video=int(data.get("frames_per_video", defaults.frames_per_video)),
            frame_size=int(data.get("frame_size", defaults.frame_size)),
            motion_kinds=tuple(data.get("motion_kinds", defaults.motion_kinds)),
            base_speed_range=tuple(float(v) for v in data.get("base_speed_range", defaults.base_speed_range)),
            object_radius=int(data.get("object_radius", defaults.object_radius)),
            noise_amplitude=float(data.get("noise_amplitude", defaults.noise_amplitude)),
            seed=int(data.get("seed", defaults.seed)),
        )


@dataclass(frozen=True)
class DatasetEntry:
    """One manifest row."""
    id: str
    path: str
    num_frames: int
    label: int | None
    split: str

    def to_row(self) -> list[str]:
        return [self.id, self.path, str(self.num_frames), "" if self.label is None else str(self.label), self.split]

    @classmethod
    def from_row(cls, row: list[str]) -> "DatasetEntry":
        video_id, path, num_frames, label, split = row
        return cls(
            id=video_id,
            path=path,
            num_frames=int(num_frames),
            label=int(label) if label != "" else None,
            split=split,
        )
