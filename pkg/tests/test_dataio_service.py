"""DataIO Service 单元测试。"""

import random
import shutil
from dataclasses import replace

import cv2
import numpy as np
import pytest
import torch

from src.models import DataConfig, SamplerParams, SynthSpec, VsppSample
from src.services.dataio_service import (
    ClipOutOfRangeError,
    DataIOError,
    EmptyDirectoryError,
    InvalidSpecError,
    UnreadableFrameError,
    decode_clip,
    generate_synth_dataset,
    load_dataset,
    load_frame_dir,
    load_manifest_dataset,
    read_manifest,
    select_split,
    write_synth_dataset,
)
from src.services.sampling_service import uniform_pace_indices, vspp_indices
from tests.oracle import classify_motion, reference_speed_estimate


def _linear_spec(speed: float, **overrides) -> SynthSpec:
    """单类 (circle, linear), 固定速度。"""
    values = {
        "num_classes": 1,
        "videos_per_class": 3,
        "frames_per_video": 64,
        "frame_size": 36,
        "base_speed_range": (speed, speed),
        "seed": 5,
    }
    values.update(overrides)
    return SynthSpec(**values)


class TestGenerateSynthDataset:
    """测试合成数据集生成。"""

    def test_desk_spec_layout(self, desk_synth_spec):
        """桌面规模: 200 个视频, 每类 40/5/5 切分。"""
        videos = generate_synth_dataset(desk_synth_spec)
        assert len(videos) == 200
        assert len({v.id for v in videos}) == 200
        assert len(select_split(videos, "train")) == 160
        assert len(select_split(videos, "val")) == 20
        assert len(select_split(videos, "test")) == 20
        for label in range(4):
            in_class = [v for v in videos if v.label == label]
            assert len(in_class) == 50
            assert sum(v.split == "train" for v in in_class) == 40

    def test_frame_format(self, small_synth_spec):
        video = generate_synth_dataset(small_synth_spec)[0]
        frame = video.get_frame(0)
        assert frame.dtype == np.uint8
        assert frame.shape == (20, 20, 3)
        assert video.num_frames == 20

    def test_same_spec_same_pixels(self, small_synth_spec):
        """同一 spec 两次生成逐像素一致。"""
        a = generate_synth_dataset(small_synth_spec)
        b = generate_synth_dataset(small_synth_spec)
        for va, vb in zip(a, b):
            assert va.id == vb.id and va.split == vb.split
            for t in (0, 7, 19):
                assert np.array_equal(va.get_frame(t), vb.get_frame(t))

    def test_different_seed_differs(self, small_synth_spec):
        other = replace(small_synth_spec, seed=1)
        a = generate_synth_dataset(small_synth_spec)[0].get_frame(3)
        b = generate_synth_dataset(other)[0].get_frame(3)
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"num_classes": 0},
            {"num_classes": 10},
            {"videos_per_class": 0},
            {"frame_size": 8, "object_radius": 5},
            {"base_speed_range": (2.0, 1.0)},
            {"motion_kinds": ("teleport",)},
            {"noise_amplitude": -1.0},
        ],
    )
    def test_invalid_spec(self, overrides):
        """测试无效 spec。"""
        with pytest.raises(InvalidSpecError):
            generate_synth_dataset(SynthSpec(**overrides))


class TestSynthMotion:
    """用像素级位移估计检验速度与运动方式 (不依赖生成参数)。"""

    def test_speed_scales_with_stride(self):
        """速度 2 的视频隔帧采样 ~ 速度 4 的视频逐帧采样。"""
        slow = generate_synth_dataset(_linear_spec(2.0))
        fast = generate_synth_dataset(_linear_spec(4.0))
        for v_slow, v_fast in zip(slow, fast):
            strided = reference_speed_estimate(v_slow, list(range(0, 40, 2)))
            natural = reference_speed_estimate(v_fast, list(range(0, 20)))
            assert abs(strided - natural) < 0.5

    @pytest.mark.parametrize("speed", [1.0, 1.5, 2.0])
    def test_uniform_pace_clip_speed(self, speed):
        """lambda 倍速片段的估计速度 ~ lambda * 基础速度。"""
        video = generate_synth_dataset(_linear_spec(speed))[0]
        params = SamplerParams(num_frames=video.num_frames, clip_length=8, segments=1, max_speed=4)
        for lambda_ in range(1, 5):
            sample = uniform_pace_indices(params, lambda_, 0)
            estimate = reference_speed_estimate(video, sample.indices)
            assert abs(estimate - lambda_ * speed) < 0.5

    def test_altered_segment_is_faster(self):
        video = generate_synth_dataset(_linear_spec(1.5))[0]
        params = SamplerParams(num_frames=64, clip_length=16, segments=4, max_speed=4)
        sample = vspp_indices(params, 3, 2, 0)
        altered = reference_speed_estimate(video, sample.indices[4:8])
        natural = reference_speed_estimate(video, sample.indices[8:12])
        assert abs(altered - 4.5) < 0.5
        assert abs(natural - 1.5) < 0.5

    def test_static_video_has_zero_speed(self):
        video = generate_synth_dataset(_linear_spec(0.0, videos_per_class=1))[0]
        assert reference_speed_estimate(video, list(range(10))) < 0.25

    def test_motion_kind_recovered(self, desk_synth_spec):
        """从轨迹恢复 linear / circular / oscillating。"""
        videos = generate_synth_dataset(desk_synth_spec)
        for label, kind in enumerate(["linear", "circular", "oscillating"]):
            in_class = [v for v in videos if v.label == label][:5]
            for video in in_class:
                assert classify_motion(video) == kind, video.id


class TestLoadFrameDir:
    """测试帧目录读取。"""

    def test_reads_every_frame(self, frame_dir):
        video = load_frame_dir(frame_dir)
        assert video.num_frames == 16
        assert (video.height, video.width) == (12, 10)
        assert video.id == "video_a"
        assert int(video.get_frame(5)[0, 0, 0]) == 50

    def test_listing_order_does_not_matter(self, frame_dir, tmp_path):
        """乱序复制后结果一致。"""
        shuffled = tmp_path / "shuffled"
        shuffled.mkdir()
        names = sorted(p.name for p in frame_dir.iterdir())
        random.Random(0).shuffle(names)
        for name in names:
            shutil.copy(frame_dir / name, shuffled / name)
        a, b = load_frame_dir(frame_dir), load_frame_dir(shuffled)
        for t in range(16):
            assert np.array_equal(a.get_frame(t), b.get_frame(t))

    def test_natural_numeric_order(self, tmp_path):
        """frame_2 排在 frame_10 之前。"""
        directory = tmp_path / "unpadded"
        directory.mkdir()
        for i in range(12):
            cv2.imwrite(str(directory / f"frame_{i}.png"), np.full((4, 4, 3), 20 * i, dtype=np.uint8))
        video = load_frame_dir(directory)
        assert [int(video.get_frame(t)[0, 0, 0]) for t in range(12)] == [20 * i for i in range(12)]

    def test_non_image_file_is_named(self, frame_dir):
        (frame_dir / "notes.txt").write_text("hello", encoding="utf-8")
        with pytest.raises(UnreadableFrameError, match="notes.txt"):
            load_frame_dir(frame_dir)

    def test_corrupt_image_is_named(self, frame_dir):
        (frame_dir / "frame_000000.png").write_bytes(b"not a png")
        with pytest.raises(UnreadableFrameError, match="frame_000000.png"):
            load_frame_dir(frame_dir)

    def test_empty_directory(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(EmptyDirectoryError):
            load_frame_dir(empty)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(EmptyDirectoryError):
            load_frame_dir(tmp_path / "nope")


class TestDecodeClip:
    """测试片段解码。"""

    def test_matches_direct_indexing(self, frame_dir):
        video = load_frame_dir(frame_dir)
        sample = vspp_indices(SamplerParams(num_frames=16, clip_length=8, segments=4, max_speed=4), 2, 3, 1)
        clip = decode_clip(video, sample)
        assert clip.shape == (3, 8, 12, 10)
        assert clip.dtype == torch.float32
        for t, source in enumerate(sample.indices):
            expected = torch.from_numpy(video.get_frame(source)).float().div(255.0).permute(2, 0, 1)
            assert torch.equal(clip[:, t], expected)

    def test_values_in_unit_range(self, small_synth_spec):
        video = generate_synth_dataset(small_synth_spec)[0]
        clip = decode_clip(video, VsppSample(1, 1, 0, tuple(range(8))))
        assert float(clip.min()) >= 0.0
        assert float(clip.max()) <= 1.0

    def test_out_of_range(self, frame_dir):
        video = load_frame_dir(frame_dir)
        with pytest.raises(ClipOutOfRangeError):
            decode_clip(video, VsppSample(1, 1, 10, tuple(range(10, 18))))


class TestManifest:
    """测试 manifest 写出与读取。"""

    def test_write_then_load(self, small_synth_spec, tmp_path):
        videos = generate_synth_dataset(small_synth_spec)[:6]
        manifest = write_synth_dataset(videos, tmp_path / "synth")
        entries = read_manifest(manifest)
        assert [e.id for e in entries] == [v.id for v in videos]
        loaded = load_manifest_dataset(manifest)
        for original, reloaded in zip(videos, loaded):
            assert reloaded.label == original.label
            assert reloaded.split == original.split
            assert reloaded.num_frames == original.num_frames
            assert np.array_equal(reloaded.get_frame(4), original.get_frame(4))

    def test_load_dataset_manifest_source(self, small_synth_spec, tmp_path):
        """相对路径的 manifest 以 data_root 为基准。"""
        write_synth_dataset(generate_synth_dataset(small_synth_spec)[:2], tmp_path / "synth")
        data = DataConfig(source="manifest", manifest="synth/manifest.tsv")
        videos = load_dataset(data, tmp_path)
        assert len(videos) == 2

    def test_bad_header(self, tmp_path):
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text("a\tb\n", encoding="utf-8")
        with pytest.raises(DataIOError):
            read_manifest(manifest)

    def test_unknown_source(self):
        with pytest.raises(DataIOError):
            load_dataset(DataConfig(source="youtube"))
