"""Run Service - Orchestration of every command.

This module handles:
- Run directories (run-id scoped, config.yaml written first)
- Thread count / deterministic-algorithm setup
- The auxiliary distillation stage, the pace-prediction stage, finetuning and evaluation
- Per-epoch checkpoints (epoch_XXX.pt + last.pt) and exact resume
- The with/without auxiliary-stage comparison across seeds
- Small tool commands (inspect-sample, plot, make-synth)

Interface Contract:
- cmd_pretrain_aux(config, resume=None) -> StageResult
- cmd_pretrain_vspp(config, checkpoint=None, resume=None) -> StageResult
- cmd_finetune(config, checkpoint=None, scratch=False, resume=None) -> StageResult
- cmd_evaluate(config, checkpoints, split="test") -> EvalReport
- cmd_compare(config, seeds) -> Path
- cmd_inspect_sample(...) -> str, cmd_plot(...) -> list[Path], cmd_make_synth(...) -> Path
- Orchestration failures raise RunError; component errors propagate unchanged
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from statistics import mean
from typing import Any, Sequence

import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

import config
from src.datasets import AuxClipDataset, EpochPermutationSampler, VsppClipDataset
from src.models import Checkpoint, EncoderConfig, RunConfig, SamplerParams, VideoSource
from src.networks import ClassifierNetwork, Encoder3D, build_encoder, init_from_scratch
from src.services.checkpoint_service import (
    capture_rng_state,
    encoder_state_from_checkpoint,
    load_checkpoint,
    restore_rng_state,
    save_checkpoint,
)
from src.services.config_service import (
    build_scheduler,
    config_hash,
    default_run_id,
    write_config_yaml,
)
from src.services.dataio_service import generate_synth_dataset, load_dataset, select_split, write_synth_dataset
from src.services.distill_service import DistillPair, MemoryBank, aux_train_step
from src.services.eval_service import evaluate_dataset, finetune
from src.services.metrics_service import MetricsWriter, plot_metrics, truncate_after_epoch, write_table
from src.services.pretext_service import build_vspp_network, load_stage1_weights, vspp_eval_batch, vspp_train_step
from src.services.sampling_service import vspp_indices

logger = logging.getLogger(__name__)

METRICS_NAME = "metrics.csv"
RESULTS_NAME = "results.csv"
REPORT_NAME = "ab_report.csv"

AUX_COLUMNS = ["step", "epoch", "kl_loss", "bank_fill", "lr", "max_prob_sum_error"]
VSPP_COLUMNS = [
    "epoch", "speed_loss", "segment_loss", "total", "speed_acc", "segment_acc",
    "val_speed_acc", "val_segment_acc", "lr",
]
SEGMENT_COLUMNS = ("segment_loss", "segment_acc", "val_segment_acc")
FINETUNE_COLUMNS = ["epoch", "loss", "train_acc", "lr"]
RESULT_COLUMNS = ["run_id", "split", "checkpoint", "top1", "topk", "k", "num_videos", "config_hash"]
REPORT_COLUMNS = ["seed", "with_aux_top1", "without_aux_top1", "gap", "config_hash"]


class RunError(Exception):
    """Raised when a command cannot be orchestrated (bad inputs, missing data)."""


@dataclass
class StageResult:
    stage: str
    run_dir: Path
    checkpoint: Path
    metrics: Path
    config_hash: str
    history: list[dict[str, Any]] = dataclass_field(default_factory=list)


@dataclass
class EvalReport:
    path: Path
    rows: list[dict[str, Any]]


# ============================================================================
# Run plumbing
# ============================================================================

def configure_torch() -> None:
    torch.set_num_threads(config.NUM_THREADS)
    if config.DETERMINISTIC:
        torch.use_deterministic_algorithms(True, warn_only=True)


def prepare_run(run_config: RunConfig, stage: str, variant: str = "") -> tuple[RunConfig, Path, str]:
    """Pin the stage, derive the run id, create the run dir and write config.yaml."""
    run_config = dataclasses.replace(run_config, stage=stage)
    if not run_config.run_id:
        run_config = dataclasses.replace(run_config, run_id=default_run_id(run_config, variant))
    run_dir = Path(run_config.out_dir or config.RUNS_DIR) / run_config.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = config_hash(run_config)
    write_config_yaml(run_config, run_dir / "config.yaml")
    configure_torch()
    logger.info("[RUN] %s run %s (config %s) in %s", stage, run_config.run_id, digest, run_dir)
    return run_config, run_dir, digest


def _split(run_config: RunConfig, split: str) -> list[VideoSource]:
    videos = select_split(load_dataset(run_config.data), split)
    if not videos:
        raise RunError(f"dataset has no {split!r} videos")
    return videos


def _num_classes(run_config: RunConfig, videos: Sequence[VideoSource]) -> int:
    if run_config.data.source == "synthetic":
        return run_config.data.synth.num_classes
    labels = [v.label for v in videos if v.label is not None]
    if not labels:
        raise RunError("no labelled videos in the dataset")
    return max(labels) + 1


def _sgd(parameters, lr: float, run_config: RunConfig) -> torch.optim.SGD:
    return torch.optim.SGD(
        parameters, lr=lr, momentum=run_config.optim.momentum, weight_decay=run_config.optim.weight_decay
    )


def _loader(dataset, order: EpochPermutationSampler, run_config: RunConfig) -> DataLoader:
    return DataLoader(
        dataset, batch_size=run_config.optim.batch_size, sampler=order, num_workers=run_config.data.num_workers
    )


def _make_checkpoint(
    run_config: RunConfig,
    digest: str,
    state: dict[str, dict[str, Any]],
    optimizer: torch.optim.Optimizer,
    scheduler: Any,
    epoch: int,
    step: int,
    bank: MemoryBank | None = None,
) -> Checkpoint:
    return Checkpoint(
        format_version=config.CHECKPOINT_FORMAT_VERSION,
        stage=run_config.stage,
        encoder_config=run_config.encoder.to_dict(),
        config=run_config.to_dict(),
        config_hash=digest,
        state=state,
        optimizer=optimizer.state_dict(),
        scheduler=scheduler.state_dict(),
        bank=bank.state_dict() if bank is not None else None,
        rng=capture_rng_state(),
        epoch=epoch,
        step=step,
    )


def _save_epoch(run_dir: Path, checkpoint: Checkpoint) -> Path:
    save_checkpoint(checkpoint, run_dir / f"epoch_{checkpoint.epoch:03d}.pt")
    return save_checkpoint(checkpoint, run_dir / "last.pt")


def _load_resume(path: Path | str, stage: str, digest: str) -> Checkpoint:
    checkpoint = load_checkpoint(path)
    if checkpoint.stage != stage:
        raise RunError(f"cannot resume {stage} from a {checkpoint.stage} checkpoint ({path})")
    if checkpoint.config_hash != digest:
        raise RunError(
            f"resume checkpoint {path} was written by config {checkpoint.config_hash}, this run is {digest}"
        )
    restore_rng_state(checkpoint.rng)
    logger.info("[RUN] Resuming %s after epoch %s (step %s)", stage, checkpoint.epoch, checkpoint.step)
    return checkpoint


def _progress(loader: DataLoader, desc: str):
    return tqdm(loader, desc=desc, leave=False, disable=not config.SHOW_PROGRESS)


# ============================================================================
# Auxiliary distillation stage
# ============================================================================

def cmd_pretrain_aux(run_config: RunConfig, *, resume: Path | str | None = None) -> StageResult:
    run_config, run_dir, digest = prepare_run(run_config, "aux")
    videos = _split(run_config, "train")
    distill = run_config.distill

    student, teacher = init_from_scratch(run_config.encoder, distill, run_config.seed)
    pair = DistillPair(
        student=student,
        teacher=teacher,
        momentum=distill.momentum,
        teacher_temperature=distill.teacher_temperature,
        student_temperature=distill.student_temperature,
    )
    bank = MemoryBank(distill.bank_size, distill.projection_dim)
    optimizer = _sgd(student.parameters(), run_config.optim.lr, run_config)
    scheduler = build_scheduler(optimizer, run_config.optim.lr_step_epochs, run_config.optim.lr_gamma)

    start_epoch, step = 1, 0
    metrics_path = run_dir / METRICS_NAME
    if resume is not None:
        checkpoint = _load_resume(resume, "aux", digest)
        student.load_state_dict(checkpoint.state["student"])
        teacher.load_state_dict(checkpoint.state["teacher"])
        optimizer.load_state_dict(checkpoint.optimizer)
        scheduler.load_state_dict(checkpoint.scheduler)
        bank.load_state_dict(checkpoint.bank)
        start_epoch, step = checkpoint.epoch + 1, checkpoint.step
        truncate_after_epoch(metrics_path, checkpoint.epoch)

    dataset = AuxClipDataset(videos, run_config.sampler, run_config.augment, run_config.seed)
    order = EpochPermutationSampler(len(dataset), run_config.seed)
    loader = _loader(dataset, order, run_config)
    last = run_dir / "last.pt"

    with MetricsWriter(metrics_path, AUX_COLUMNS, digest, append=resume is not None) as writer:
        for epoch in range(start_epoch, run_config.optim.epochs + 1):
            dataset.set_epoch(epoch)
            order.set_epoch(epoch)
            lr = optimizer.param_groups[0]["lr"]
            losses = []
            for student_view, teacher_view in _progress(loader, f"aux {epoch}"):
                if student_view.shape[0] < 2:
                    # BatchNorm in the predictor needs two rows
                    logger.debug("[AUX] Skipping a batch of one")
                    continue
                result = aux_train_step(pair, bank, student_view, teacher_view, optimizer)
                step += 1
                sums = (*result.teacher_sums, *result.student_sums)
                writer.write_row({
                    "step": step,
                    "epoch": epoch,
                    "kl_loss": result.loss,
                    "bank_fill": result.bank_fill,
                    "lr": lr,
                    "max_prob_sum_error": max(abs(s - 1.0) for s in sums),
                })
                losses.append(result.loss)
            scheduler.step()
            state = {"student": student.state_dict(), "teacher": teacher.state_dict()}
            last = _save_epoch(
                run_dir, _make_checkpoint(run_config, digest, state, optimizer, scheduler, epoch, step, bank)
            )
            logger.info(
                "[AUX] Epoch %s: mean kl=%.5f bank=%s/%s lr=%s",
                epoch, mean(losses) if losses else float("nan"), bank.fill, bank.capacity, lr,
            )
    return StageResult("aux", run_dir, last, metrics_path, digest)


# ============================================================================
# Pace-prediction stage
# ============================================================================

def _vspp_columns(segments: int) -> list[str]:
    if segments > 1:
        return list(VSPP_COLUMNS)
    return [c for c in VSPP_COLUMNS if c not in SEGMENT_COLUMNS]


def _vspp_validate(model, loader: DataLoader | None) -> tuple[Any, Any]:
    if loader is None:
        return "", ""
    speed, segment, seen = 0, 0, 0
    for clips, speed_labels, segment_labels in loader:
        s, g = vspp_eval_batch(model, clips, speed_labels, segment_labels)
        speed += s
        segment += g
        seen += clips.shape[0]
    return speed / seen, segment / seen


def cmd_pretrain_vspp(
    run_config: RunConfig,
    *,
    checkpoint: Path | str | None = None,
    resume: Path | str | None = None,
) -> StageResult:
    """Pace pretraining, from a stage-1 checkpoint or from scratch."""
    run_config, run_dir, digest = prepare_run(run_config, "vspp", "aux" if checkpoint else "scratch")
    sampler = run_config.sampler
    train_videos = _split(run_config, "train")
    val_videos = select_split(load_dataset(run_config.data), "val")

    if checkpoint is not None:
        model = load_stage1_weights(
            load_checkpoint(checkpoint), run_config.encoder, sampler.max_speed, sampler.segments, run_config.seed
        )
    else:
        model = build_vspp_network(run_config.encoder, sampler.max_speed, sampler.segments, run_config.seed)
    optimizer = _sgd(model.parameters(), run_config.optim.lr, run_config)
    scheduler = build_scheduler(optimizer, run_config.optim.lr_step_epochs, run_config.optim.lr_gamma)

    start_epoch, step = 1, 0
    metrics_path = run_dir / METRICS_NAME
    if resume is not None:
        resumed = _load_resume(resume, "vspp", digest)
        model.load_state_dict(resumed.state["vspp"])
        optimizer.load_state_dict(resumed.optimizer)
        scheduler.load_state_dict(resumed.scheduler)
        start_epoch, step = resumed.epoch + 1, resumed.step
        truncate_after_epoch(metrics_path, resumed.epoch)

    dataset = VsppClipDataset(train_videos, sampler, run_config.augment, run_config.seed)
    order = EpochPermutationSampler(len(dataset), run_config.seed)
    loader = _loader(dataset, order, run_config)
    val_loader = None
    if val_videos:
        # fixed epoch and no random augmentation: the same clips every epoch
        val_set = VsppClipDataset(
            val_videos, sampler, dataclasses.replace(run_config.augment, enabled=False), run_config.seed
        )
        val_loader = DataLoader(val_set, batch_size=run_config.optim.batch_size)

    columns = _vspp_columns(sampler.segments)
    last = run_dir / "last.pt"
    history = []
    with MetricsWriter(metrics_path, columns, digest, append=resume is not None) as writer:
        for epoch in range(start_epoch, run_config.optim.epochs + 1):
            dataset.set_epoch(epoch)
            order.set_epoch(epoch)
            lr = optimizer.param_groups[0]["lr"]
            totals = {"total": 0.0, "speed_loss": 0.0, "segment_loss": 0.0}
            speed_correct, segment_correct, seen = 0, 0, 0
            for clips, speed_labels, segment_labels in _progress(loader, f"vspp {epoch}"):
                result = vspp_train_step(model, clips, speed_labels, segment_labels, run_config.vspp, optimizer)
                step += 1
                totals["total"] += result.total * result.batch_size
                totals["speed_loss"] += result.speed_loss * result.batch_size
                totals["segment_loss"] += result.segment_loss * result.batch_size
                speed_correct += result.speed_correct
                segment_correct += result.segment_correct
                seen += result.batch_size
            scheduler.step()
            val_speed, val_segment = _vspp_validate(model, val_loader)

            row = {
                "epoch": epoch,
                "speed_loss": totals["speed_loss"] / seen,
                "segment_loss": totals["segment_loss"] / seen,
                "total": totals["total"] / seen,
                "speed_acc": speed_correct / seen,
                "segment_acc": segment_correct / seen,
                "val_speed_acc": val_speed,
                "val_segment_acc": val_segment,
                "lr": lr,
            }
            row = {k: v for k, v in row.items() if k in columns}
            writer.write_row(row)
            history.append(row)
            last = _save_epoch(
                run_dir,
                _make_checkpoint(run_config, digest, {"vspp": model.state_dict()}, optimizer, scheduler, epoch, step),
            )
            logger.info(
                "[VSPP] Epoch %s: total=%.4f speed_acc=%.3f val_speed_acc=%s lr=%s",
                epoch, row["total"], row["speed_acc"], val_speed, lr,
            )
    return StageResult("vspp", run_dir, last, metrics_path, digest, history)


# ============================================================================
# Finetuning / evaluation
# ============================================================================

def cmd_finetune(
    run_config: RunConfig,
    *,
    checkpoint: Path | str | None = None,
    scratch: bool = False,
    resume: Path | str | None = None,
) -> StageResult:
    """Finetune a pretrained encoder (or a scratch one with `scratch=True`)."""
    if checkpoint is None and not scratch:
        raise RunError("finetune needs a pretrained checkpoint, or the scratch baseline flag")
    if checkpoint is not None and scratch:
        raise RunError("give either a checkpoint or the scratch flag, not both")
    run_config, run_dir, digest = prepare_run(run_config, "finetune", "scratch" if scratch else "pretrained")

    encoder = build_encoder(run_config.encoder, run_config.seed)
    if checkpoint is not None:
        source = load_checkpoint(checkpoint)
        encoder.load_state_dict(encoder_state_from_checkpoint(source, run_config.encoder))
        logger.info("[FINETUNE] Encoder from %s checkpoint %s", source.stage, checkpoint)

    videos = _split(run_config, "train")
    num_classes = _num_classes(run_config, load_dataset(run_config.data))

    metrics_path = run_dir / METRICS_NAME
    resume_state = None
    step_box = {"step": 0}
    if resume is not None:
        resumed = _load_resume(resume, "finetune", digest)
        resume_state = {
            "model": resumed.state["classifier"],
            "optimizer": resumed.optimizer,
            "scheduler": resumed.scheduler,
            "epoch": resumed.epoch,
        }
        step_box["step"] = resumed.step
        truncate_after_epoch(metrics_path, resumed.epoch)

    last_box = {"path": run_dir / "last.pt"}
    with MetricsWriter(metrics_path, FINETUNE_COLUMNS, digest, append=resume is not None) as writer:
        def on_epoch(epoch: int, model: ClassifierNetwork, optimizer, scheduler, row: dict[str, Any]) -> None:
            writer.write_row(row)
            step_box["step"] += -(-len(videos) // run_config.optim.batch_size)
            last_box["path"] = _save_epoch(
                run_dir,
                _make_checkpoint(
                    run_config, digest, {"classifier": model.state_dict()}, optimizer, scheduler, epoch, step_box["step"]
                ),
            )

        _, history = finetune(encoder, videos, run_config, num_classes, on_epoch=on_epoch, resume=resume_state)
    return StageResult("finetune", run_dir, last_box["path"], metrics_path, digest, history)


def load_classifier(checkpoint: Checkpoint) -> tuple[ClassifierNetwork, EncoderConfig]:
    """Rebuild the finetuned classifier stored in a checkpoint."""
    state = checkpoint.state.get("classifier")
    if not state:
        raise RunError(f"a {checkpoint.stage} checkpoint holds no classifier; evaluate needs a finetune checkpoint")
    encoder_config = EncoderConfig.from_dict(checkpoint.encoder_config)
    model = ClassifierNetwork(Encoder3D(encoder_config), int(state["classifier.weight"].shape[0]))
    model.load_state_dict(state)
    return model, encoder_config


def cmd_evaluate(run_config: RunConfig, checkpoints: Sequence[Path | str], *, split: str = "test") -> EvalReport:
    """One results row per checkpoint; the file is rewritten on every call."""
    if not checkpoints:
        raise RunError("evaluate needs at least one checkpoint")
    run_config, run_dir, _ = prepare_run(run_config, "evaluate")
    videos = _split(run_config, split)

    rows = []
    for path in checkpoints:
        checkpoint = load_checkpoint(path)
        model, encoder_config = load_classifier(checkpoint)
        _, clip_length, crop_size, _ = encoder_config.input_shape
        result = evaluate_dataset(model, videos, run_config.eval, clip_length, crop_size, split)
        rows.append({
            "run_id": run_config.run_id,
            "split": split,
            "checkpoint": str(path),
            "top1": result.top1,
            "topk": result.topk,
            "k": result.k,
            "num_videos": len(result.predictions),
            "config_hash": checkpoint.config_hash,
        })
    path = write_table(run_dir / RESULTS_NAME, RESULT_COLUMNS, rows)
    return EvalReport(path, rows)


# ============================================================================
# With/without auxiliary stage
# ============================================================================

def cmd_compare(run_config: RunConfig, seeds: Sequence[int]) -> Path:
    """Full pipeline per seed with and without the auxiliary stage; writes ab_report.csv."""
    if not seeds:
        raise RunError("compare needs at least one seed")
    digest = config_hash(run_config)
    root = Path(run_config.out_dir or config.RUNS_DIR) / f"compare-{digest[:8]}"
    rows = []
    for seed in seeds:
        base = dataclasses.replace(run_config, seed=seed, out_dir=str(root))

        def arm(name: str) -> RunConfig:
            return dataclasses.replace(base, run_id=f"{name}-seed{seed}")

        aux = cmd_pretrain_aux(arm("aux"))
        with_vspp = cmd_pretrain_vspp(arm("vspp-with-aux"), checkpoint=aux.checkpoint)
        with_ft = cmd_finetune(arm("finetune-with-aux"), checkpoint=with_vspp.checkpoint)
        with_eval = cmd_evaluate(arm("evaluate-with-aux"), [with_ft.checkpoint])

        without_vspp = cmd_pretrain_vspp(arm("vspp-without-aux"))
        without_ft = cmd_finetune(arm("finetune-without-aux"), checkpoint=without_vspp.checkpoint)
        without_eval = cmd_evaluate(arm("evaluate-without-aux"), [without_ft.checkpoint])

        with_top1 = with_eval.rows[0]["top1"]
        without_top1 = without_eval.rows[0]["top1"]
        rows.append({
            "seed": seed,
            "with_aux_top1": with_top1,
            "without_aux_top1": without_top1,
            "gap": with_top1 - without_top1,
            "config_hash": digest,
        })
        logger.info("[COMPARE] seed %s: with=%.4f without=%.4f gap=%+.4f", seed, with_top1, without_top1, with_top1 - without_top1)

    gap = mean(row["gap"] for row in rows)
    logger.info("[COMPARE] Mean gap over %s seeds: %+.4f", len(rows), gap)
    return write_table(root / REPORT_NAME, REPORT_COLUMNS, rows)


# ============================================================================
# Tools
# ============================================================================

def cmd_inspect_sample(
    num_frames: int,
    clip_length: int,
    segments: int,
    max_speed: int,
    lambda_: int,
    zeta: int,
    f_r: int,
) -> str:
    params = SamplerParams(num_frames=num_frames, clip_length=clip_length, segments=segments, max_speed=max_speed)
    return vspp_indices(params, lambda_, zeta, f_r).to_record()


def cmd_plot(paths: Sequence[Path | str], out_dir: Path, labels: Sequence[str] | None = None) -> list[Path]:
    return plot_metrics(paths, out_dir, labels)


def cmd_make_synth(run_config: RunConfig, root: Path) -> Path:
    """Write the configured synthetic dataset as PNG frame directories plus manifest.tsv."""
    return write_synth_dataset(generate_synth_dataset(run_config.data.synth), Path(root))
