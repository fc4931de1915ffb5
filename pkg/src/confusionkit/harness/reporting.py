"""Run-directory outputs: report JSON, heatmap CSV/PGM, loss curve, checkpoint.

Everything written here is byte-deterministic for a fixed seed: JSON is
canonical (sorted keys), CSV cells use repr-stable float formatting, and the
PGM grayscale is scaled against the matrix maximum.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..errors import ParameterError
from ..serialization import canonical_json


def heatmap_csv_bytes(matrix: np.ndarray, names: list[str]) -> bytes:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ParameterError(f"heatmap needs a square matrix, got shape {matrix.shape}")
    if len(names) != matrix.shape[0]:
        raise ParameterError(
            f"{len(names)} names do not label a {matrix.shape[0]}-row matrix"
        )
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([""] + list(names))
    for name, row in zip(names, matrix):
        writer.writerow([name] + [int(v) for v in row])
    return buffer.getvalue().encode("utf-8")


def parse_heatmap_csv(data: bytes) -> tuple[np.ndarray, list[str]]:
    rows = list(csv.reader(io.StringIO(data.decode("utf-8"))))
    names = rows[0][1:]
    matrix = np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=np.int64)
    return matrix, names


def heatmap_pgm_bytes(matrix: np.ndarray) -> bytes:
    """8-bit binary PGM scaled so the matrix maximum maps to 255."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ParameterError(f"heatmap needs a 2-D matrix, got shape {matrix.shape}")
    peak = matrix.max()
    if peak > 0:
        scaled = np.round(matrix * (255.0 / peak)).astype(np.uint8)
    else:
        scaled = np.zeros(matrix.shape, dtype=np.uint8)
    header = f"P5\n{matrix.shape[1]} {matrix.shape[0]}\n255\n".encode("ascii")
    return header + scaled.tobytes()


def heatmap_report(matrix: np.ndarray, names: list[str], path_base) -> tuple[Path, Path]:
    """Write <base>.csv and <base>.pgm; returns both paths."""
    base = Path(path_base)
    csv_path = base.with_suffix(".csv")
    pgm_path = base.with_suffix(".pgm")
    csv_path.write_bytes(heatmap_csv_bytes(matrix, names))
    pgm_path.write_bytes(heatmap_pgm_bytes(np.asarray(matrix)))
    return csv_path, pgm_path


def loss_curve_csv_bytes(curve: list[float]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["epoch", "mean_loss"])
    for epoch, value in enumerate(curve):
        writer.writerow([epoch, repr(float(value))])
    return buffer.getvalue().encode("utf-8")


def write_run_dir(run_dir, model, report, world_path: str | None = None,
                  bank_path: str | None = None) -> Path:
    from .trainer import save_checkpoint

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config_echo = dict(report.config)
    if world_path is not None:
        config_echo["world_path"] = str(world_path)
    if bank_path is not None:
        config_echo["bank_path"] = str(bank_path)
    (run_dir / "config.json").write_text(canonical_json(config_echo))
    (run_dir / "report.json").write_text(canonical_json(report.to_json_dict()))
    names = report.category_names
    heatmap_report(np.array(report.confusion_before), names, run_dir / "heatmap_before")
    heatmap_report(np.array(report.confusion_after), names, run_dir / "heatmap_after")
    (run_dir / "loss_curve.csv").write_bytes(loss_curve_csv_bytes(report.loss_curve))
    save_checkpoint(model, run_dir / "checkpoint.bin")
    return run_dir
