"""测试 oracle 自身 (有限差分梯度, 质心速度估计)。"""

from dataclasses import dataclass

import numpy as np
import pytest
import torch

from src.models import VsppLossWeights
from src.networks import l2_normalize
from src.services.distill_service import (
    MemoryBank,
    kl_loss,
    kl_loss_from_logits,
    similarity_distribution,
    similarity_logits,
)
from src.services.pretext_service import vspp_loss
from tests.oracle import (
    NonDeterministicLoss,
    finite_diff_grad,
    grad_check,
    object_centroid,
    reference_speed_estimate,
    step_displacements,
)


@dataclass
class FrameList:
    frames: list

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def get_frame(self, index: int) -> np.ndarray:
        return self.frames[index]


def _square(x0: int, y0: int, size: int = 20, side: int = 4) -> np.ndarray:
    """背景为 0, 边长 side 的白色方块, 越界部分环绕。"""
    frame = np.zeros((size, size, 3), dtype=np.uint8)
    for dy in range(side):
        for dx in range(side):
            frame[(y0 + dy) % size, (x0 + dx) % size] = 255
    return frame


class TestFiniteDifferences:
    """测试中心差分梯度。"""

    def test_quadratic_loss(self):
        x = torch.tensor([0.5, -1.0, 2.0], dtype=torch.float64, requires_grad=True)
        c = torch.tensor([1.0, 3.0, 0.5], dtype=torch.float64)
        numeric = finite_diff_grad(lambda: (c * x**2).sum(), {"x": x})
        assert torch.allclose(numeric["x"], 2 * c * x.detach(), atol=1e-6)

    def test_parameters_restored(self):
        x = torch.tensor([0.25, 0.75], dtype=torch.float64, requires_grad=True)
        finite_diff_grad(lambda: (x**3).sum(), {"x": x})
        assert x.tolist() == [0.25, 0.75]

    def test_nondeterministic_loss(self):
        x = torch.zeros(2, dtype=torch.float64, requires_grad=True)
        with pytest.raises(NonDeterministicLoss):
            finite_diff_grad(lambda: (x + torch.rand(2, dtype=torch.float64)).sum(), {"x": x})

    def test_kl_gradient(self, random_unit_vectors):
        """gamma=0.1, float64: 自动求导与中心差分一致。"""
        bank = MemoryBank(4, 8, dtype=torch.float64)
        bank.enqueue(random_unit_vectors(4, 8, seed=1, dtype=torch.float64))
        teacher = random_unit_vectors(3, 8, seed=2, dtype=torch.float64)
        raw = random_unit_vectors(3, 8, seed=3, dtype=torch.float64).mul(1.5).requires_grad_(True)

        def loss():
            p_t = similarity_distribution(teacher, bank, 0.1)
            p_s = similarity_distribution(l2_normalize(raw), bank, 0.1)
            return kl_loss(p_t, p_s)

        (report,) = grad_check(loss, {"student": raw})
        assert report.max_relative_error < 1e-3

    def test_log_space_kl_gradient(self, random_unit_vectors):
        """训练中实际使用的对数空间 KL: 4 个锚点, 8 维。"""
        bank = MemoryBank(4, 8, dtype=torch.float64)
        bank.enqueue(random_unit_vectors(4, 8, seed=4, dtype=torch.float64))
        teacher = random_unit_vectors(3, 8, seed=5, dtype=torch.float64)
        raw = random_unit_vectors(3, 8, seed=6, dtype=torch.float64).mul(0.7).requires_grad_(True)

        def loss():
            return kl_loss_from_logits(
                similarity_logits(teacher, bank, 0.1),
                similarity_logits(l2_normalize(raw), bank, 0.1),
            )

        (report,) = grad_check(loss, {"student": raw})
        assert report.name == "student"
        assert report.max_relative_error < 1e-3

    def test_vspp_loss_gradient(self):
        generator = torch.Generator().manual_seed(0)
        speed = torch.randn(5, 4, generator=generator, dtype=torch.float64).requires_grad_(True)
        segment = torch.randn(5, 4, generator=generator, dtype=torch.float64).requires_grad_(True)
        speed_labels = torch.tensor([0, 1, 2, 3, 1])
        segment_labels = torch.tensor([3, 2, 1, 0, 0])
        weights = VsppLossWeights(alpha=1.0, beta=0.5)

        reports = grad_check(
            lambda: vspp_loss(speed, segment, speed_labels, segment_labels, weights)[0],
            {"speed": speed, "segment": segment},
        )
        assert all(r.max_relative_error < 1e-3 for r in reports)


class TestCentroidSpeed:
    """测试基于像素的速度估计。"""

    def test_blank_frame(self):
        assert object_centroid(np.zeros((10, 10, 3), dtype=np.uint8)) is None

    def test_centroid_of_square(self):
        x, y = object_centroid(_square(5, 8))
        assert (x, y) == (pytest.approx(6.5), pytest.approx(9.5))

    def test_step_across_border(self):
        """跨越右边界的 +4 位移不会被当成 -16。"""
        video = FrameList([_square(18, 5), _square(2, 5)])
        steps = step_displacements(video, [0, 1])
        assert steps[0].tolist() == pytest.approx([4.0, 0.0], abs=1e-6)

    def test_constant_speed(self):
        video = FrameList([_square(3 * t, 2 * t) for t in range(8)])
        assert reference_speed_estimate(video, range(8)) == pytest.approx(np.hypot(3, 2), abs=1e-6)
        assert reference_speed_estimate(video, [0, 2, 4, 6]) == pytest.approx(2 * np.hypot(3, 2), abs=1e-6)

    def test_static_video(self):
        video = FrameList([_square(4, 4)] * 5)
        assert reference_speed_estimate(video, range(5)) == 0.0
