"""Metrics Service - CSV metrics, result tables and convergence plots.

This module handles:
- Schema-versioned metrics CSV writing (one row per step or epoch)
- Reading metrics back with a schema check
- Dropping rows past a resumed epoch
- Loss / accuracy curve images, overlaid when given several runs

Interface Contract:
- MetricsWriter(path, fieldnames, config_hash, append=False).write_row(row)
- read_metrics(path) -> (fieldnames, rows)
- truncate_after_epoch(path, epoch) -> rows kept
- write_table(path, fieldnames, rows) -> Path
- plot_metrics(paths, out_dir, labels) -> list[Path]
- All methods raise MetricsError subclasses on failure
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import config  # noqa: E402

logger = logging.getLogger(__name__)

HEADER_COLUMNS = ("schema_version", "config_hash")

# Columns that index rows rather than measure anything
_AXIS_COLUMNS = ("step", "epoch")


class MetricsError(Exception):
    """Base class for metrics errors."""


class SchemaMismatchError(MetricsError):
    """Raised when a metrics file has a foreign or missing schema version."""


class MetricsWriter:
    """Append-only CSV writer; every row carries the schema version and config hash."""

    def __init__(self, path: Path, fieldnames: Sequence[str], config_hash: str, *, append: bool = False):
        self.path = Path(path)
        self.fieldnames = [*HEADER_COLUMNS, *fieldnames]
        self.config_hash = config_hash
        self.path.parent.mkdir(parents=True, exist_ok=True)
        resume = append and self.path.exists()
        if resume:
            existing, _ = read_metrics(self.path)
            if existing != self.fieldnames:
                raise SchemaMismatchError(f"{self.path} has columns {existing}, expected {self.fieldnames}")
        self._file = open(self.path, "a" if resume else "w", newline="", encoding="utf-8")
        self._writer = csv.DictWriter(self._file, fieldnames=self.fieldnames, lineterminator="\n")
        if not resume:
            self._writer.writeheader()
            self._file.flush()

    def write_row(self, row: dict[str, Any]) -> None:
        self._writer.writerow({"schema_version": config.METRICS_SCHEMA_VERSION, "config_hash": self.config_hash, **row})
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def read_metrics(path: Path | str) -> tuple[list[str], list[dict[str, str]]]:
    """Rows of a metrics CSV. Raises SchemaMismatchError for other schema versions."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            rows = list(reader)
            fieldnames = list(reader.fieldnames or [])
    except OSError as exc:
        raise MetricsError(f"cannot read metrics file {path}: {exc}") from exc
    if "schema_version" not in fieldnames:
        raise SchemaMismatchError(f"{path} has no schema_version column")
    expected = str(config.METRICS_SCHEMA_VERSION)
    for row in rows:
        if row["schema_version"] != expected:
            raise SchemaMismatchError(f"{path} has schema version {row['schema_version']}, expected {expected}")
    return fieldnames, rows


def truncate_after_epoch(path: Path, epoch: int) -> int:
    """Keep only rows with epoch <= `epoch`. Returns the number of rows kept."""
    path = Path(path)
    if not path.exists():
        return 0
    fieldnames, rows = read_metrics(path)
    kept = [row for row in rows if int(row["epoch"]) <= epoch]
    write_table(path, fieldnames, kept)
    if len(kept) != len(rows):
        logger.info("[METRICS] Dropped %s rows past epoch %s in %s", len(rows) - len(kept), epoch, path)
    return len(kept)


def write_table(path: Path, fieldnames: Sequence[str], rows: Sequence[dict[str, Any]]) -> Path:
    """Overwrite `path` with a header and rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


# ============================================================================
# Plots
# ============================================================================

def _numeric_columns(fieldnames: list[str], rows: list[dict[str, str]]) -> list[str]:
    columns = []
    for name in fieldnames:
        if name in HEADER_COLUMNS or name in _AXIS_COLUMNS:
            continue
        try:
            [float(row[name]) for row in rows if row[name] != ""]
        except ValueError:
            continue
        columns.append(name)
    return columns


def plot_metrics(
    paths: Sequence[Path | str],
    out_dir: Path,
    labels: Sequence[str] | None = None,
) -> list[Path]:
    """One PNG per metric; several files are overlaid on shared axes.

    The x axis is `step` when every file has it, `epoch` otherwise.
    """
    if not paths:
        raise MetricsError("no metrics files given")
    labels = list(labels) if labels else [Path(p).parent.name or Path(p).stem for p in paths]
    if len(labels) != len(paths):
        raise MetricsError(f"{len(labels)} labels for {len(paths)} metrics files")

    tables = [read_metrics(p) for p in paths]
    hashes = sorted({row["config_hash"] for _, rows in tables for row in rows[:1]})
    x_axis = "step" if all("step" in fields for fields, _ in tables) else "epoch"
    metrics = [name for name in _numeric_columns(*tables[0]) if all(name in fields for fields, _ in tables[1:])]
    if not metrics:
        raise MetricsError("metrics files share no numeric columns")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = []
    for metric in metrics:
        fig, ax = plt.subplots(figsize=(6, 4))
        for (_, rows), label in zip(tables, labels):
            points = [(float(row[x_axis]), float(row[metric])) for row in rows if row[metric] != ""]
            if points:
                xs, ys = zip(*points)
                ax.plot(xs, ys, label=label)
        ax.set_xlabel(x_axis)
        ax.set_ylabel(metric)
        ax.set_title(metric.replace("_", " "))
        ax.grid(True, alpha=0.3)
        if len(tables) > 1:
            ax.legend()
        fig.tight_layout()
        image = out_dir / f"{metric}.png"
        fig.savefig(image, metadata={"Description": "config_hash=" + ",".join(hashes)})
        plt.close(fig)
        images.append(image)
    logger.info("[PLOT] Wrote %s images to %s", len(images), out_dir)
    return images
