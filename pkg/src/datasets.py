"""torch Datasets feeding the training stages.

Every random draw is a pure function of (seed, epoch, video index, view), so a
resumed run, a run with DataLoader workers, and an uninterrupted run all see the
same clips. Call `set_epoch` on both the dataset and the sampler before
iterating an epoch.
"""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np
import torch
from torch.utils.data import Dataset, Sampler

from src.models import AugmentPolicy, SamplerConfig, SamplerParams, VideoSource, VsppSample
from src.services.augment_service import augment_clip
from src.services.dataio_service import decode_clip
from src.services.sampling_service import sample_vspp, uniform_pace_indices

STUDENT_VIEW = 0
TEACHER_VIEW = 1


class EpochPermutationSampler(Sampler[int]):
    """Seeded per-epoch shuffle."""

    def __init__(self, size: int, seed: int):
        self.size = size
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __iter__(self) -> Iterator[int]:
        order = np.random.default_rng([self.seed, self.epoch]).permutation(self.size)
        return iter(order.tolist())

    def __len__(self) -> int:
        return self.size


class _ClipDataset(Dataset):
    def __init__(self, videos: Sequence[VideoSource], sampler: SamplerConfig, augment: AugmentPolicy, seed: int):
        self.videos = list(videos)
        self.sampler = sampler
        self.augment = augment
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.videos)

    def _rng(self, index: int, view: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.epoch, index, view])

    def _params(self, video: VideoSource) -> SamplerParams:
        return SamplerParams(
            num_frames=video.num_frames,
            clip_length=self.sampler.clip_length,
            segments=self.sampler.segments,
            max_speed=self.sampler.max_speed,
            seed=self.seed,
        )

    def sample_for(self, index: int, view: int = STUDENT_VIEW) -> VsppSample:
        """The VSPP plan used for (current epoch, index, view)."""
        video = self.videos[index]
        return sample_vspp(self._params(video), self._rng(index, view), max_redraws=self.sampler.max_redraws)

    def _view(self, index: int, view: int, sample: VsppSample) -> torch.Tensor:
        video = self.videos[index]
        clip = decode_clip(video, sample)
        return augment_clip(clip, self.augment, (self.seed, self.epoch, video.id, view))


class AuxClipDataset(_ClipDataset):
    """Two independently sampled and augmented VSPP clips per video."""

    def __getitem__(self, index: int) -> tuple[torch.Tensor, torch.Tensor]:
        student = self._view(index, STUDENT_VIEW, self.sample_for(index, STUDENT_VIEW))
        teacher = self._view(index, TEACHER_VIEW, self.sample_for(index, TEACHER_VIEW))
        return student, teacher


class VsppClipDataset(_ClipDataset):
    """One VSPP clip per video with its (speed, segment) labels."""

    def __getitem__(self, index: int) -> tuple[torch.Tensor, int, int]:
        sample = self.sample_for(index)
        return self._view(index, STUDENT_VIEW, sample), sample.speed_label, sample.segment_label


class FinetuneClipDataset(_ClipDataset):
    """Natural-pace clip at a random offset, with the video's class label."""

    def sample_for(self, index: int, view: int = STUDENT_VIEW) -> VsppSample:
        video = self.videos[index]
        params = self._params(video)
        top = video.num_frames - params.clip_length
        f_r = int(self._rng(index, view).integers(0, top + 1)) if top > 0 else 0
        return uniform_pace_indices(params, 1, f_r)

    def __getitem__(self, index: int) -> tuple[torch.Tensor, int]:
        label = self.videos[index].label
        if label is None:
            raise ValueError(f"video {self.videos[index].id} has no label")
        return self._view(index, STUDENT_VIEW, self.sample_for(index)), label
