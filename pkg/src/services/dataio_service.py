"""DataIO Service - Video sources and clip decoding.

This module handles:
- The moving-shapes synthetic dataset (rendered on demand, seeded per frame)
- Ingestion of pre-extracted frame directories and dataset manifests
- Materializing a synthetic dataset to disk (make-synth)
- Decoding a VsppSample plan into a (3, K, H, W) float clip in [0, 1]

Interface Contract:
- generate_synth_dataset(spec) -> list[VideoSource]
- load_frame_dir(path) -> VideoSource
- decode_clip(src, sample) -> torch.Tensor
- load_dataset(data_config, data_root) -> list[VideoSource]
- All methods raise DataIOError subclasses on failure

Frame layout on disk: <root>/<video_id>/frame_%06d.png
Manifest: tab-separated id, path, num_frames, label, split (paths relative to the manifest).
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
from tenacity import (
    retry,
    retry_if_exception_type,
    retry_if_not_exception_type,
    stop_after_attempt,
    wait_exponential,
)

import config
from src.models import DataConfig, DatasetEntry, SynthSpec, VideoSource, VsppSample
from src.models.video import MOTION_KINDS, SHAPES, SPLITS

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"
MANIFEST_HEADER = ["id", "path", "num_frames", "label", "split"]
FRAME_PATTERN = "frame_{:06d}.png"

# Fixed-point bits for sub-pixel drawing
_SHIFT = 4
_SCALE = 1 << _SHIFT


class DataIOError(Exception):
    """Base class for data loading errors."""


class InvalidSpecError(DataIOError):
    """Raised when a SynthSpec cannot be rendered."""


class EmptyDirectoryError(DataIOError):
    """Raised when a frame directory holds no frames."""


class UnreadableFrameError(DataIOError):
    """Raised when a frame file is not a decodable image."""


class ClipOutOfRangeError(DataIOError):
    """Raised when a clip plan indexes past the last frame."""


# ============================================================================
# Synthetic moving shapes
# ============================================================================

@dataclass(frozen=True)
class SynthVideoParams:
    """Per-video motion parameters. Pixel content is a function of these and the frame index."""
    video_index: int
    shape: str
    motion: str
    speed: float                  # px/frame (peak speed for oscillating)
    direction: float              # radians
    start: tuple[float, float]
    phase: float
    color: tuple[int, int, int]
    background: int
    frame_size: int
    radius: int
    noise_amplitude: float
    seed: int

    def position(self, t: int) -> tuple[float, float, float]:
        """(x, y, rotation) of the object at frame t."""
        size = self.frame_size
        cx = cy = size / 2.0
        if self.motion == "linear":
            x = self.start[0] + self.speed * math.cos(self.direction) * t
            y = self.start[1] + self.speed * math.sin(self.direction) * t
            return x % size, y % size, self.direction
        if self.motion == "circular":
            orbit = size / 4.0
            angle = self.phase + (self.speed / orbit) * t
            return cx + orbit * math.cos(angle), cy + orbit * math.sin(angle), angle
        # oscillating: peak speed == self.speed
        amplitude = size / 4.0
        omega = self.speed / amplitude
        offset = amplitude * math.sin(self.phase + omega * t)
        return cx + offset * math.cos(self.direction), cy + offset * math.sin(self.direction), self.direction


def _shape_points(shape: str, x: float, y: float, radius: float, rotation: float) -> np.ndarray:
    corners = 4 if shape == "square" else 3
    angles = rotation + np.arange(corners) * (2 * math.pi / corners)
    pts = np.stack([x + radius * np.cos(angles), y + radius * np.sin(angles)], axis=1)
    return np.round(pts * _SCALE).astype(np.int32)


def render_frame(params: SynthVideoParams, t: int) -> np.ndarray:
    """Render frame t as uint8 (H, W, 3) RGB. The scene wraps around the borders."""
    size = params.frame_size
    canvas = np.full((size, size, 3), params.background, dtype=np.uint8)
    x, y, rotation = params.position(t)
    for dx in (-size, 0, size):
        for dy in (-size, 0, size):
            px, py = x + dx, y + dy
            if params.shape == "circle":
                cv2.circle(
                    canvas,
                    (int(round(px * _SCALE)), int(round(py * _SCALE))),
                    int(params.radius * _SCALE),
                    params.color,
                    -1,
                    cv2.LINE_AA,
                    _SHIFT,
                )
            else:
                pts = _shape_points(params.shape, px, py, params.radius * 1.2, rotation)
                cv2.fillPoly(canvas, [pts], params.color, cv2.LINE_AA, _SHIFT)

    noise_rng = np.random.default_rng([params.seed, params.video_index, t])
    noise = noise_rng.normal(0.0, params.noise_amplitude, size=canvas.shape)
    return np.clip(np.rint(canvas.astype(np.float64) + noise), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class SynthFrameRenderer:
    """Picklable frame reader for a synthetic video."""
    params: SynthVideoParams

    def __call__(self, index: int) -> np.ndarray:
        return render_frame(self.params, index)


def validate_synth_spec(spec: SynthSpec) -> None:
    """Raise InvalidSpecError if the spec cannot be rendered."""
    max_classes = len(SHAPES) * len(spec.motion_kinds)
    if not spec.motion_kinds or any(kind not in MOTION_KINDS for kind in spec.motion_kinds):
        raise InvalidSpecError(f"motion_kinds must be a non-empty subset of {MOTION_KINDS}, got {spec.motion_kinds}")
    if not 1 <= spec.num_classes <= max_classes:
        raise InvalidSpecError(f"num_classes must be in [1, {max_classes}], got {spec.num_classes}")
    if spec.videos_per_class < 1 or spec.frames_per_video < 1:
        raise InvalidSpecError("videos_per_class and frames_per_video must be >= 1")
    if spec.frame_size < 4 * spec.object_radius:
        raise InvalidSpecError(f"frame_size {spec.frame_size} too small for object radius {spec.object_radius}")
    lo, hi = spec.base_speed_range
    if not 0 <= lo <= hi:
        raise InvalidSpecError(f"base_speed_range must satisfy 0 <= lo <= hi, got {spec.base_speed_range}")
    if spec.noise_amplitude < 0:
        raise InvalidSpecError("noise_amplitude must be >= 0")


def synth_video_params(spec: SynthSpec, label: int, index_in_class: int) -> SynthVideoParams:
    """Draw the motion parameters of one video from (spec.seed, video index)."""
    video_index = label * spec.videos_per_class + index_in_class
    shape, motion = spec.class_pair(label)
    rng = np.random.default_rng([spec.seed, video_index])
    lo, hi = spec.base_speed_range
    return SynthVideoParams(
        video_index=video_index,
        shape=shape,
        motion=motion,
        speed=float(rng.uniform(lo, hi)),
        direction=float(rng.uniform(0.0, 2 * math.pi)),
        start=(float(rng.uniform(0, spec.frame_size)), float(rng.uniform(0, spec.frame_size))),
        phase=float(rng.uniform(0.0, 2 * math.pi)),
        color=tuple(int(c) for c in rng.integers(150, 256, size=3)),
        background=int(rng.integers(20, 90)),
        frame_size=spec.frame_size,
        radius=spec.object_radius,
        noise_amplitude=spec.noise_amplitude,
        seed=spec.seed,
    )


def _split_assignment(spec: SynthSpec, label: int) -> list[str]:
    """80/10/10 split of one class's videos, shuffled with the spec seed."""
    n = spec.videos_per_class
    n_val = int(round(0.1 * n))
    n_test = int(round(0.1 * n))
    n_train = n - n_val - n_test
    order = np.random.default_rng([spec.seed, label, 7919]).permutation(n)
    splits = [""] * n
    for rank, i in enumerate(order):
        splits[int(i)] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return splits


def generate_synth_dataset(spec: SynthSpec) -> list[VideoSource]:
    """Build every video of the spec. Frames render lazily and deterministically."""
    validate_synth_spec(spec)
    videos: list[VideoSource] = []
    for label in range(spec.num_classes):
        splits = _split_assignment(spec, label)
        for i in range(spec.videos_per_class):
            params = synth_video_params(spec, label, i)
            videos.append(
                VideoSource(
                    id=f"synth_{label:02d}_{i:04d}",
                    num_frames=spec.frames_per_video,
                    height=spec.frame_size,
                    width=spec.frame_size,
                    label=label,
                    split=splits[i],
                    reader=SynthFrameRenderer(params),
                )
            )
    logger.info(
        "[DATA] Synthetic dataset: %s classes x %s videos x %s frames (%spx)",
        spec.num_classes, spec.videos_per_class, spec.frames_per_video, spec.frame_size,
    )
    return videos


# ============================================================================
# Frame directories
# ============================================================================

def _natural_key(name: str) -> list[object]:
    return [int(part) if part.isdigit() else part for part in re.split(r"(\d+)", name)]


@retry(
    stop=stop_after_attempt(config.IO_RETRY_ATTEMPTS),
    wait=wait_exponential(multiplier=0.05, max=1),
    retry=retry_if_exception_type(OSError) & retry_if_not_exception_type(FileNotFoundError),
    reraise=True,
)
def _read_bytes(path: Path) -> bytes:
    return path.read_bytes()


def read_frame_file(path: Path) -> np.ndarray:
    """Decode one image file to uint8 (H, W, 3) RGB."""
    try:
        data = _read_bytes(path)
    except OSError as exc:
        raise UnreadableFrameError(f"cannot read frame {path.name}: {exc}") from exc
    image = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_COLOR)
    if image is None:
        raise UnreadableFrameError(f"not a decodable image: {path.name}")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


@dataclass(frozen=True)
class FrameFileReader:
    """Picklable reader over an ordered list of frame files."""
    paths: tuple[Path, ...]
    height: int
    width: int

    def __call__(self, index: int) -> np.ndarray:
        frame = read_frame_file(self.paths[index])
        if frame.shape[:2] != (self.height, self.width):
            raise UnreadableFrameError(
                f"frame {self.paths[index].name} is {frame.shape[1]}x{frame.shape[0]}, "
                f"expected {self.width}x{self.height}"
            )
        return frame


def load_frame_dir(
    path: Path | str,
    *,
    video_id: str | None = None,
    label: int | None = None,
    split: str = "train",
) -> VideoSource:
    """Wrap a directory of image files as a VideoSource.

    Files are ordered by their numeric filename parts, so directory listing order
    never matters. Only the first frame is decoded here; the rest decode on access.

    Raises:
        EmptyDirectoryError: no frame files
        UnreadableFrameError: a non-image file is present, or the first frame fails to decode
    """
    directory = Path(path)
    if not directory.is_dir():
        raise EmptyDirectoryError(f"frame directory does not exist: {directory}")
    files = [p for p in directory.iterdir() if p.is_file() and not p.name.startswith(".")]
    if not files:
        raise EmptyDirectoryError(f"no frames in {directory}")
    for file in files:
        if file.suffix.lower() not in config.IMAGE_SUFFIXES:
            raise UnreadableFrameError(f"non-image file in frame directory {directory}: {file.name}")

    ordered = tuple(sorted(files, key=lambda p: _natural_key(p.name)))
    first = read_frame_file(ordered[0])
    height, width = first.shape[:2]
    return VideoSource(
        id=video_id or directory.name,
        num_frames=len(ordered),
        height=height,
        width=width,
        label=label,
        split=split,
        path=str(directory),
        reader=FrameFileReader(ordered, height, width),
    )


# ============================================================================
# Manifests
# ============================================================================

def write_manifest(entries: list[DatasetEntry], manifest_path: Path) -> Path:
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for entry in entries:
            writer.writerow(entry.to_row())
    return manifest_path


def read_manifest(manifest_path: Path) -> list[DatasetEntry]:
    try:
        with open(manifest_path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f, delimiter="\t"))
    except OSError as exc:
        raise DataIOError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if not rows or rows[0] != MANIFEST_HEADER:
        raise DataIOError(f"manifest {manifest_path} must start with header {MANIFEST_HEADER}")
    entries = [DatasetEntry.from_row(row) for row in rows[1:] if row]
    for entry in entries:
        if entry.split not in SPLITS:
            raise DataIOError(f"manifest row {entry.id}: unknown split {entry.split!r}")
    return entries


def write_synth_dataset(videos: list[VideoSource], root: Path) -> Path:
    """Write every frame as PNG under root and return the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    entries: list[DatasetEntry] = []
    for video in videos:
        video_dir = root / video.id
        video_dir.mkdir(parents=True, exist_ok=True)
        for t in range(video.num_frames):
            frame = cv2.cvtColor(video.get_frame(t), cv2.COLOR_RGB2BGR)
            if not cv2.imwrite(str(video_dir / FRAME_PATTERN.format(t)), frame):
                raise DataIOError(f"failed to write frame {t} of {video.id} under {video_dir}")
        entries.append(DatasetEntry(video.id, video.id, video.num_frames, video.label, video.split))
    manifest = write_manifest(entries, root / MANIFEST_NAME)
    logger.info("[DATA] Wrote %s videos to %s", len(videos), root)
    return manifest


def load_manifest_dataset(manifest_path: Path) -> list[VideoSource]:
    base = manifest_path.parent
    videos = []
    for entry in read_manifest(manifest_path):
        video = load_frame_dir(base / entry.path, video_id=entry.id, label=entry.label, split=entry.split)
        if video.num_frames != entry.num_frames:
            raise DataIOError(
                f"manifest says {entry.id} has {entry.num_frames} frames, directory has {video.num_frames}"
            )
        videos.append(video)
    return videos


def load_dataset(data: DataConfig, data_root: Path | None = None) -> list[VideoSource]:
    """Resolve the configured source into a list of videos."""
    if data.source == "synthetic":
        return generate_synth_dataset(data.synth)
    if data.source == "manifest":
        manifest = Path(data.manifest) if data.manifest else Path(MANIFEST_NAME)
        if not manifest.is_absolute():
            manifest = (data_root or config.DATA_ROOT) / manifest
        return load_manifest_dataset(manifest)
    raise DataIOError(f"unknown data source {data.source!r} (expected synthetic or manifest)")


def select_split(videos: list[VideoSource], split: str) -> list[VideoSource]:
    return [v for v in videos if v.split == split]


# ============================================================================
# Clip decoding
# ============================================================================

def decode_clip(src: VideoSource, sample: VsppSample) -> torch.Tensor:
    """Fetch the planned frames: output frame t is source frame sample.indices[t].

    Returns:
        float32 tensor (3, K, H, W) with values in [0, 1]

    Raises:
        ClipOutOfRangeError: the plan indexes a frame >= N
    """
    if not sample.indices:
        raise ClipOutOfRangeError("empty clip plan")
    top = max(sample.indices)
    if top > src.num_frames - 1 or min(sample.indices) < 0:
        raise ClipOutOfRangeError(
            f"plan reads frame {top} but video {src.id} has N={src.num_frames} frames"
        )
    frames = np.stack([src.get_frame(i) for i in sample.indices])  # (K, H, W, 3)
    clip = torch.from_numpy(frames).to(torch.float32).div_(255.0)
    return clip.permute(3, 0, 1, 2).contiguous()
