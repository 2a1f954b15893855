from __future__ import annotations

import argparse
import logging
from pathlib import Path

from dotenv import load_dotenv
load_dotenv()  # Load .env before config reads the environment

import config  # noqa: E402
from src.networks import NetworkError
from src.services.augment_service import AugmentError
from src.services.checkpoint_service import CheckpointError
from src.services.config_service import ConfigError, resolve_config
from src.services.dataio_service import DataIOError
from src.services.distill_service import DistillError
from src.services.eval_service import EvalError
from src.services.metrics_service import MetricsError
from src.services.pretext_service import PretextError
from src.services.run_service import (
    RunError,
    cmd_compare,
    cmd_evaluate,
    cmd_finetune,
    cmd_inspect_sample,
    cmd_make_synth,
    cmd_plot,
    cmd_pretrain_aux,
    cmd_pretrain_vspp,
)
from src.services.sampling_service import SamplingError

SERVICE_ERRORS = (
    SamplingError,
    DataIOError,
    AugmentError,
    NetworkError,
    DistillError,
    PretextError,
    CheckpointError,
    EvalError,
    ConfigError,
    MetricsError,
    RunError,
)


def _add_run_options(parser: argparse.ArgumentParser, *, resume: bool = True) -> None:
    parser.add_argument("--config", type=Path, help="YAML run configuration")
    parser.add_argument("--profile", choices=["desk", "paper"], help="Settings profile (default: paper, or the file's)")
    parser.add_argument("--seed", type=int, help="Run seed (overrides the file)")
    parser.add_argument("--out-dir", help=f"Parent directory for run outputs (default: {config.RUNS_DIR})")
    parser.add_argument("--run-id", help="Run directory name (default: <stage>-<hash>-seed<seed>)")
    parser.add_argument(
        "--temperature",
        type=float,
        help="Set teacher and student temperatures together (grid: 0.01, 0.02, 0.05, 0.07, 0.1)",
    )
    if resume:
        parser.add_argument("--resume", type=Path, help="Checkpoint of this run to continue from")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m src.cli",
        description="Self-supervised video pretraining: auxiliary distillation stage, segment pace prediction, finetune and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    aux = sub.add_parser("pretrain-aux", help="Auxiliary teacher/student distillation stage")
    _add_run_options(aux)

    vspp = sub.add_parser("pretrain-vspp", help="Segment pace prediction stage")
    _add_run_options(vspp)
    vspp.add_argument("--checkpoint", type=Path, help="Stage-1 checkpoint (omit to train from scratch)")

    ft = sub.add_parser("finetune", help="Finetune a pretrained encoder on labelled videos")
    _add_run_options(ft)
    ft.add_argument("--checkpoint", type=Path, help="Pretrained checkpoint (aux, vspp or finetune)")
    ft.add_argument("--scratch", action="store_true", help="Finetune a randomly initialized encoder")

    ev = sub.add_parser("evaluate", help="Multi-clip top-1 evaluation of finetuned checkpoints")
    _add_run_options(ev, resume=False)
    ev.add_argument("--checkpoint", type=Path, nargs="+", required=True, help="One or more finetune checkpoints")
    ev.add_argument("--split", default="test", choices=["train", "val", "test"])

    inspect = sub.add_parser("inspect-sample", help="Print the frame-index plan of one (lambda, zeta, f_r)")
    inspect.add_argument("--num-frames", type=int, required=True, help="N, frames in the source video")
    inspect.add_argument("--clip-length", type=int, default=16, help="K (default: 16)")
    inspect.add_argument("--segments", type=int, default=4, help="Z (default: 4)")
    inspect.add_argument("--max-speed", type=int, default=4, help="Q (default: 4)")
    inspect.add_argument("--lambda", dest="lambda_", type=int, required=True, help="Speed rate of the altered segment")
    inspect.add_argument("--zeta", type=int, required=True, help="1-based altered segment")
    inspect.add_argument("--f-r", dest="f_r", type=int, default=0, help="Start offset (default: 0)")

    plot = sub.add_parser("plot", help="Loss/accuracy curves from one or more metrics.csv files")
    plot.add_argument("metrics", type=Path, nargs="+")
    plot.add_argument("--out-dir", type=Path, required=True)
    plot.add_argument("--labels", nargs="+", help="Legend label per metrics file")

    synth = sub.add_parser("make-synth", help="Write the synthetic moving-shapes dataset to disk")
    synth.add_argument("--config", type=Path, help="YAML run configuration (data.synth section)")
    synth.add_argument("--profile", choices=["desk", "paper"])
    synth.add_argument("--out-dir", type=Path, default=config.DATA_ROOT / "synth", help="Dataset root")

    compare = sub.add_parser("compare", help="With/without auxiliary stage over several seeds")
    _add_run_options(compare, resume=False)
    compare.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    return parser


def _resolve(args: argparse.Namespace, stage: str):
    return resolve_config(
        args.config,
        stage=stage,
        profile=args.profile,
        seed=args.seed,
        out_dir=args.out_dir,
        run_id=args.run_id,
        temperature=args.temperature,
    )


def run(args: argparse.Namespace) -> None:
    if args.command == "pretrain-aux":
        result = cmd_pretrain_aux(_resolve(args, "aux"), resume=args.resume)
        print(result.checkpoint)
    elif args.command == "pretrain-vspp":
        result = cmd_pretrain_vspp(_resolve(args, "vspp"), checkpoint=args.checkpoint, resume=args.resume)
        print(result.checkpoint)
    elif args.command == "finetune":
        if args.checkpoint is None and not args.scratch:
            raise SystemExit("finetune needs --checkpoint or --scratch")
        result = cmd_finetune(
            _resolve(args, "finetune"), checkpoint=args.checkpoint, scratch=args.scratch, resume=args.resume
        )
        print(result.checkpoint)
    elif args.command == "evaluate":
        report = cmd_evaluate(_resolve(args, "evaluate"), args.checkpoint, split=args.split)
        for row in report.rows:
            print(f"{row['checkpoint']}\t{row['split']}\ttop1={row['top1']:.4f}")
        print(report.path)
    elif args.command == "inspect-sample":
        print(cmd_inspect_sample(
            args.num_frames, args.clip_length, args.segments, args.max_speed, args.lambda_, args.zeta, args.f_r
        ))
    elif args.command == "plot":
        for image in cmd_plot(args.metrics, args.out_dir, args.labels):
            print(image)
    elif args.command == "make-synth":
        run_config = resolve_config(args.config, profile=args.profile)
        print(cmd_make_synth(run_config, args.out_dir))
    elif args.command == "compare":
        print(cmd_compare(_resolve(args, "aux"), args.seeds))


def main(argv: list[str] | None = None) -> None:
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL, logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except SERVICE_ERRORS as exc:
        raise SystemExit(f"error: {exc}") from exc


if __name__ == "__main__":
    main()
