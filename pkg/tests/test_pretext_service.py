"""Pretext Service 单元测试。"""

import math
from dataclasses import replace

import pytest
import torch

import config
from src.models import Checkpoint, DistillConfig, VsppLossWeights
from src.networks import init_from_scratch
from src.services.checkpoint_service import ConfigMismatchError, CorruptCheckpointError
from src.services.pretext_service import (
    LabelOutOfRangeError,
    LogitShapeError,
    PretextError,
    build_vspp_network,
    load_stage1_weights,
    vspp_eval_batch,
    vspp_loss,
    vspp_train_step,
)

ONES = VsppLossWeights(alpha=1.0, beta=1.0)


def _logits(batch: int = 6, classes: int = 4, seed: int = 0) -> torch.Tensor:
    return torch.randn(batch, classes, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def _labels(batch: int = 6, classes: int = 4, seed: int = 0) -> torch.Tensor:
    return torch.randint(0, classes, (batch,), generator=torch.Generator().manual_seed(seed))


def _aux_checkpoint(encoder_config, seed: int = 0) -> Checkpoint:
    student, teacher = init_from_scratch(encoder_config, DistillConfig(projection_dim=16, predictor_hidden=32), seed)
    with torch.no_grad():
        for param in student.encoder.parameters():
            param.add_(0.01)
    return Checkpoint(
        format_version=config.CHECKPOINT_FORMAT_VERSION,
        stage="aux",
        encoder_config=encoder_config.to_dict(),
        config={},
        config_hash="0" * 16,
        state={"student": student.state_dict(), "teacher": teacher.state_dict()},
    )


class TestVsppLoss:
    """测试联合交叉熵损失。"""

    def test_uniform_logits(self):
        """均匀 logits, Q=Z=4: total = 2 ln 4。"""
        zeros = torch.zeros(5, 4, dtype=torch.float64)
        total, speed, segment = vspp_loss(zeros, zeros, _labels(5), _labels(5, seed=1), ONES)
        assert float(total) == pytest.approx(2 * math.log(4), abs=1e-6)
        assert float(speed) == pytest.approx(math.log(4), abs=1e-6)
        assert float(segment) == pytest.approx(math.log(4), abs=1e-6)

    def test_speed_only(self):
        """beta=0 时 total 等于速度交叉熵。"""
        total, speed, _ = vspp_loss(_logits(), _logits(seed=1), _labels(), _labels(seed=1), VsppLossWeights(1.0, 0.0))
        assert float(total) == pytest.approx(float(speed), abs=1e-12)

    def test_linear_in_weights(self):
        speed_logits, segment_logits = _logits(seed=2), _logits(seed=3)
        speed_labels, segment_labels = _labels(seed=2), _labels(seed=3)

        def total(alpha, beta):
            return float(vspp_loss(speed_logits, segment_logits, speed_labels, segment_labels, VsppLossWeights(alpha, beta))[0])

        for alpha, beta in [(0.3, 1.7), (2.0, 0.5), (1.0, 1.0)]:
            assert total(alpha, beta) == pytest.approx(alpha * total(1, 0) + beta * total(0, 1), abs=1e-6)

    def test_margin_drives_loss_to_zero(self):
        labels = torch.tensor([0, 1, 2, 3])
        previous = float("inf")
        for margin in (1.0, 5.0, 10.0, 20.0):
            logits = torch.nn.functional.one_hot(labels, 4).double() * margin
            value = float(vspp_loss(logits, logits, labels, labels, ONES)[0])
            assert value < previous
            previous = value
        assert previous < 1e-6

    def test_single_segment(self):
        """Z=1: 无分段头, 损失只含速度项。"""
        total, speed, segment = vspp_loss(_logits(), None, _labels(), torch.zeros(6, dtype=torch.long), ONES)
        assert float(segment) == 0.0
        assert float(total) == pytest.approx(float(speed))

    def test_shape_mismatch(self):
        with pytest.raises(LogitShapeError):
            vspp_loss(_logits(6), _logits(6), _labels(5), _labels(6), ONES)

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRangeError):
            vspp_loss(_logits(), _logits(), torch.full((6,), 4), _labels(), ONES)

    def test_negative_weight(self):
        with pytest.raises(PretextError):
            vspp_loss(_logits(), _logits(), _labels(), _labels(), VsppLossWeights(-1.0, 1.0))


class TestVsppTrainStep:
    """测试单步训练。"""

    def _batch(self, seed: int = 0):
        generator = torch.Generator().manual_seed(seed)
        clips = torch.rand(4, 3, 8, 16, 16, generator=generator)
        return clips, torch.tensor([0, 1, 2, 3]), torch.tensor([3, 2, 1, 0])

    def test_zero_weights_leave_parameters(self, tiny_encoder_config):
        model = build_vspp_network(tiny_encoder_config, 4, 4, seed=0)
        before = [p.detach().clone() for p in model.parameters()]
        optimizer = torch.optim.SGD(model.parameters(), lr=0.1, momentum=0.9, weight_decay=5e-4)
        vspp_train_step(model, *self._batch(), VsppLossWeights(0.0, 0.0), optimizer)
        assert all(torch.equal(b, p) for b, p in zip(before, model.parameters()))

    def test_step_from_stage1_changes_conv_weights(self, tiny_encoder_config):
        model = load_stage1_weights(_aux_checkpoint(tiny_encoder_config), tiny_encoder_config, 4, 4, seed=0)
        conv_before = model.encoder.stem[0].weight.detach().clone()
        optimizer = torch.optim.SGD(model.parameters(), lr=0.1)
        result = vspp_train_step(model, *self._batch(), ONES, optimizer)
        assert not torch.equal(conv_before, model.encoder.stem[0].weight)
        assert result.batch_size == 4
        assert 0 <= result.speed_correct <= 4
        assert all(key.startswith(("encoder.", "heads.")) for key in model.state_dict())

    def test_eval_batch_counts(self, tiny_encoder_config):
        model = build_vspp_network(tiny_encoder_config, 4, 4, seed=0)
        speed_correct, segment_correct = vspp_eval_batch(model, *self._batch())
        assert 0 <= speed_correct <= 4 and 0 <= segment_correct <= 4
        assert not model.training


class TestLoadStage1Weights:
    """测试从辅助阶段加载编码器权重。"""

    def test_encoder_copied_bit_exactly(self, tiny_encoder_config):
        checkpoint = _aux_checkpoint(tiny_encoder_config)
        model = load_stage1_weights(checkpoint, tiny_encoder_config, 4, 4, seed=3)
        student_state = checkpoint.state["student"]
        for name, value in model.encoder.state_dict().items():
            assert torch.equal(value, student_state[f"encoder.{name}"])

    def test_same_seed_same_heads(self, tiny_encoder_config):
        checkpoint = _aux_checkpoint(tiny_encoder_config)
        a = load_stage1_weights(checkpoint, tiny_encoder_config, 4, 4, seed=3)
        b = load_stage1_weights(checkpoint, tiny_encoder_config, 4, 4, seed=3)
        c = load_stage1_weights(checkpoint, tiny_encoder_config, 4, 4, seed=4)
        assert torch.equal(a.heads.speed.weight, b.heads.speed.weight)
        assert torch.equal(a.heads.segment.weight, b.heads.segment.weight)
        assert not torch.equal(a.heads.speed.weight, c.heads.speed.weight)

    def test_encoder_mismatch(self, tiny_encoder_config):
        checkpoint = _aux_checkpoint(tiny_encoder_config)
        wider = replace(tiny_encoder_config, stage_widths=(4, 16))
        with pytest.raises(ConfigMismatchError, match="stage_widths"):
            load_stage1_weights(checkpoint, wider, 4, 4, seed=0)

    def test_checkpoint_without_encoder(self, tiny_encoder_config):
        checkpoint = replace(_aux_checkpoint(tiny_encoder_config), state={"teacher_only": {}})
        with pytest.raises(CorruptCheckpointError):
            load_stage1_weights(checkpoint, tiny_encoder_config, 4, 4, seed=0)

    def test_single_segment_network(self, tiny_encoder_config):
        model = load_stage1_weights(_aux_checkpoint(tiny_encoder_config), tiny_encoder_config, 4, 1, seed=0)
        speed, segment = model(torch.rand(2, 3, 8, 16, 16))
        assert speed.shape == (2, 4)
        assert segment is None
