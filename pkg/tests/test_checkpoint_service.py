"""Checkpoint Service 单元测试。"""

import random

import numpy as np
import pytest
import torch

import config
import src.services.checkpoint_service as checkpoint_service
from src.models import Checkpoint
from src.networks import ClassifierNetwork, build_encoder
from src.services.checkpoint_service import (
    CheckpointError,
    CheckpointNotFoundError,
    ConfigMismatchError,
    CorruptCheckpointError,
    capture_rng_state,
    encoder_state_from_checkpoint,
    load_checkpoint,
    restore_rng_state,
    save_checkpoint,
)


@pytest.fixture
def classifier_checkpoint(tiny_encoder_config) -> Checkpoint:
    model = ClassifierNetwork(build_encoder(tiny_encoder_config, seed=0), num_classes=4)
    return Checkpoint(
        format_version=config.CHECKPOINT_FORMAT_VERSION,
        stage="finetune",
        encoder_config=tiny_encoder_config.to_dict(),
        config={"seed": 0},
        config_hash="abcdef0123456789",
        state={"classifier": model.state_dict()},
        epoch=2,
        step=10,
    )


class TestSaveLoad:
    """测试保存与读取。"""

    def test_round_trip(self, classifier_checkpoint, tmp_path):
        path = save_checkpoint(classifier_checkpoint, tmp_path / "last.pt")
        loaded = load_checkpoint(path)
        assert (loaded.stage, loaded.epoch, loaded.step) == ("finetune", 2, 10)
        assert loaded.config_hash == classifier_checkpoint.config_hash
        for name, value in classifier_checkpoint.state["classifier"].items():
            assert torch.equal(loaded.state["classifier"][name], value)

    def test_same_content_same_bytes(self, classifier_checkpoint, tmp_path):
        """相同内容写到同名文件, 字节一致。"""
        a = save_checkpoint(classifier_checkpoint, tmp_path / "a" / "last.pt")
        b = save_checkpoint(classifier_checkpoint, tmp_path / "b" / "last.pt")
        assert a.read_bytes() == b.read_bytes()

    def test_no_temp_file_left(self, classifier_checkpoint, tmp_path):
        save_checkpoint(classifier_checkpoint, tmp_path / "last.pt")
        assert sorted(p.name for p in tmp_path.iterdir()) == ["last.pt"]

    def test_failed_replace_keeps_previous_file(self, classifier_checkpoint, tmp_path, monkeypatch):
        """替换失败 (重试耗尽) 时旧文件保持完整。"""
        path = save_checkpoint(classifier_checkpoint, tmp_path / "last.pt")
        original = path.read_bytes()
        calls = []

        def failing_replace(src, dst):
            calls.append(dst)
            raise OSError("disk full")

        monkeypatch.setattr(checkpoint_service.os, "replace", failing_replace)
        with pytest.raises(OSError):
            save_checkpoint(classifier_checkpoint, path)
        assert len(calls) == config.IO_RETRY_ATTEMPTS
        assert path.read_bytes() == original
        assert load_checkpoint(path).epoch == 2

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointNotFoundError):
            load_checkpoint(tmp_path / "nope.pt")

    def test_garbage_bytes(self, tmp_path):
        path = tmp_path / "bad.pt"
        path.write_bytes(b"\x00not a checkpoint")
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_wrong_payload(self, tmp_path):
        path = tmp_path / "list.pt"
        torch.save([1, 2, 3], path)
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_missing_fields(self, tmp_path):
        path = tmp_path / "partial.pt"
        torch.save({"format_version": 1, "stage": "aux"}, path)
        with pytest.raises(CorruptCheckpointError, match="encoder_config"):
            load_checkpoint(path)

    def test_version_mismatch(self, classifier_checkpoint, tmp_path):
        classifier_checkpoint.format_version = 99
        path = save_checkpoint(classifier_checkpoint, tmp_path / "future.pt")
        with pytest.raises(CheckpointError, match="version 99") as excinfo:
            load_checkpoint(path)
        assert not isinstance(excinfo.value, CorruptCheckpointError)


class TestRngState:
    """测试随机数状态的保存与恢复。"""

    def test_restore_replays_draws(self):
        state = capture_rng_state()
        expected = (random.random(), float(np.random.rand()), torch.rand(3))
        restore_rng_state(state)
        assert random.random() == expected[0]
        assert float(np.random.rand()) == expected[1]
        assert torch.equal(torch.rand(3), expected[2])

    def test_none_is_ignored(self):
        restore_rng_state(None)


class TestEncoderState:
    """测试从各阶段 checkpoint 提取编码器权重。"""

    def test_strips_prefix(self, classifier_checkpoint, tiny_encoder_config):
        state = encoder_state_from_checkpoint(classifier_checkpoint, tiny_encoder_config)
        encoder = build_encoder(tiny_encoder_config, seed=5)
        encoder.load_state_dict(state)
        for name, value in encoder.state_dict().items():
            assert torch.equal(value, classifier_checkpoint.state["classifier"][f"encoder.{name}"])

    def test_config_mismatch_lists_fields(self, classifier_checkpoint, tiny_encoder_config):
        from dataclasses import replace

        with pytest.raises(ConfigMismatchError, match="family"):
            encoder_state_from_checkpoint(classifier_checkpoint, replace(tiny_encoder_config, family="factorized2p1d"))

    def test_no_encoder_weights(self, classifier_checkpoint, tiny_encoder_config):
        classifier_checkpoint.state = {"teacher": {"projection.weight": torch.zeros(1)}}
        with pytest.raises(CorruptCheckpointError):
            encoder_state_from_checkpoint(classifier_checkpoint, tiny_encoder_config)
