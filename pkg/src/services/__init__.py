"""Service layer - one module per pipeline concern.

Each service module has a clear interface and can be developed/tested independently.
eval_service and run_service build on src.datasets and are imported by path.
"""

from .sampling_service import enumerate_valid_samples, sample_vspp, uniform_pace_indices, vspp_indices
from .dataio_service import decode_clip, generate_synth_dataset, load_dataset, load_frame_dir
from .augment_service import augment_clip, center_crop
from .distill_service import MemoryBank, aux_train_step, kl_loss, momentum_update, similarity_distribution
from .pretext_service import load_stage1_weights, vspp_loss, vspp_train_step
from .checkpoint_service import load_checkpoint, save_checkpoint
from .config_service import config_hash, resolve_config
from .metrics_service import MetricsWriter, plot_metrics, read_metrics

__all__ = [
    "enumerate_valid_samples",
    "sample_vspp",
    "uniform_pace_indices",
    "vspp_indices",
    "decode_clip",
    "generate_synth_dataset",
    "load_dataset",
    "load_frame_dir",
    "augment_clip",
    "center_crop",
    "MemoryBank",
    "aux_train_step",
    "kl_loss",
    "momentum_update",
    "similarity_distribution",
    "load_stage1_weights",
    "vspp_loss",
    "vspp_train_step",
    "load_checkpoint",
    "save_checkpoint",
    "config_hash",
    "resolve_config",
    "MetricsWriter",
    "plot_metrics",
    "read_metrics",
]
