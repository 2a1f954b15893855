"""测试配置和共享 Fixtures。"""

from pathlib import Path

import cv2
import numpy as np
import pytest
import torch
import yaml

from src.models import EncoderConfig, SynthSpec
from src.services.config_service import resolve_config


# ============================================================================
# Config Fixtures
# ============================================================================

TINY_RUN = {
    "profile": "desk",
    "seed": 3,
    "data": {
        "synth": {
            "num_classes": 4,
            "videos_per_class": 10,
            "frames_per_video": 20,
            "frame_size": 20,
            "object_radius": 3,
        },
    },
    "sampler": {"clip_length": 8, "segments": 4, "max_speed": 4},
    "augment": {"crop_size": 16},
    "encoder": {"stem_width": 4, "stage_widths": [4, 8], "blocks_per_stage": 1},
    "distill": {"bank_size": 64, "projection_dim": 16, "predictor_hidden": 32},
    "optim": {"batch_size": 8, "epochs": 2, "lr_step_epochs": 1},
    "finetune": {"epochs": 2},
    "eval": {"clips_per_video": 3},
}


@pytest.fixture
def tiny_config_path(tmp_path) -> Path:
    """写出一个极小规模的运行配置文件 (秒级完成训练)。"""
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_RUN), encoding="utf-8")
    return path


@pytest.fixture
def tiny_config(tiny_config_path, tmp_path):
    """解析后的极小规模 RunConfig, 输出写到 tmp_path/runs。"""
    return resolve_config(tiny_config_path, out_dir=str(tmp_path / "runs"))


@pytest.fixture
def tiny_encoder_config() -> EncoderConfig:
    """两层小编码器, 输入 (3, 8, 16, 16)。"""
    return EncoderConfig(stem_width=4, stage_widths=(4, 8), blocks_per_stage=1, input_shape=(3, 8, 16, 16))


# ============================================================================
# Data Fixtures
# ============================================================================

@pytest.fixture
def desk_synth_spec() -> SynthSpec:
    """桌面规模合成数据集: 4 类 x 50 视频 x 64 帧, 36px。"""
    return SynthSpec(num_classes=4, videos_per_class=50, frames_per_video=64, frame_size=36)


@pytest.fixture
def small_synth_spec() -> SynthSpec:
    """用于快速测试的小合成数据集。"""
    return SynthSpec(num_classes=4, videos_per_class=10, frames_per_video=20, frame_size=20, object_radius=3)


@pytest.fixture
def frame_dir(tmp_path) -> Path:
    """16 帧 PNG 目录, 第 i 帧的像素值全部为 10 * i。"""
    directory = tmp_path / "video_a"
    directory.mkdir()
    for i in range(16):
        frame = np.full((12, 10, 3), 10 * i, dtype=np.uint8)
        cv2.imwrite(str(directory / f"frame_{i:06d}.png"), frame)
    return directory


@pytest.fixture
def random_unit_vectors():
    """生成 (n, dim) 单位向量的工厂函数。"""
    def make(n: int, dim: int, seed: int = 0, dtype=torch.float32) -> torch.Tensor:
        generator = torch.Generator().manual_seed(seed)
        vectors = torch.randn(n, dim, generator=generator, dtype=torch.float64)
        return (vectors / vectors.norm(dim=1, keepdim=True)).to(dtype)
    return make
