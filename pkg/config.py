"""Global configuration values."""

import os
from pathlib import Path


def _env_flag(name: str, default: str) -> bool:
    return os.environ.get(name, default).lower() in ("1", "true", "yes")


def _env_int(name: str, default: int) -> int:
    try:
        return int(os.environ.get(name, str(default)))
    except ValueError:
        return default


# ============== 数据目录配置 ==============
# Root of frame directories / manifests. Synthetic datasets are written here by make-synth.
DATA_ROOT = Path(os.environ.get("VSPP_DATA_ROOT", Path(__file__).parent / "data"))

# Default parent directory for run outputs (each run gets its own run-id subdirectory)
RUNS_DIR = Path(os.environ.get("VSPP_RUNS_DIR", Path(__file__).parent / "runs"))

# ============== 日志 / 进度条 ==============
LOG_LEVEL = os.environ.get("VSPP_LOG_LEVEL", "INFO").upper()

# tqdm progress bars over batches
SHOW_PROGRESS = _env_flag("VSPP_PROGRESS", "true")

# ============== 计算配置 ==============
# torch intra-op threads; metrics are only bit-identical across runs with the same value
NUM_THREADS = _env_int("VSPP_NUM_THREADS", 4)

# torch.use_deterministic_algorithms on CPU
DETERMINISTIC = _env_flag("VSPP_DETERMINISTIC", "true")

# Gate for long-running acceptance tests
RUN_SLOW_TESTS = _env_flag("VSPP_RUN_SLOW", "false")

# ============== 文件格式版本 ==============
CHECKPOINT_FORMAT_VERSION = 1
METRICS_SCHEMA_VERSION = 1

# Frame files accepted by load_frame_dir
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

# Attempts for transient filesystem errors (frame reads, checkpoint writes)
IO_RETRY_ATTEMPTS = _env_int("VSPP_IO_RETRY_ATTEMPTS", 3)
