"""Sweep and robustness runners built on the trainer."""

from __future__ import annotations

import csv
import io

from ..bank import ConfusionBank
from ..errors import ParameterError
from ..world import World
from .config import TrainConfig
from .trainer import Report, train

SWEEPABLE = {"pairs_c", "reps_per_category"}


def noise_ablation(
    world: World,
    bank: ConfusionBank,
    config: TrainConfig,
    levels: list[float],
) -> list[tuple[float, Report]]:
    """One full train/evaluate per noise level, sharing the seed.

    Level 0 reproduces the clean run exactly: the noise stream is never
    consulted when the level is zero.
    """
    if not levels:
        raise ParameterError("need at least one noise level")
    results = []
    for level in levels:
        if not 0 <= level <= 1:
            raise ParameterError(f"noise level must lie in [0, 1], got {level}")
        _, report = train(world, bank, config.with_overrides(noise_level=level))
        results.append((level, report))
    return results


def sweep(
    world: World,
    bank: ConfusionBank,
    config: TrainConfig,
    parameter: str,
    values: list,
) -> list[tuple[object, Report]]:
    """One full run per value of a swept hyperparameter, shared seed."""
    if parameter not in SWEEPABLE:
        raise ParameterError(f"cannot sweep {parameter!r}; choose one of {sorted(SWEEPABLE)}")
    if not values:
        raise ParameterError("need at least one sweep value")
    results = []
    for value in values:
        _, report = train(world, bank, config.with_overrides(**{parameter: value}))
        results.append((value, report))
    return results


def results_csv_bytes(parameter: str, results: list[tuple[object, Report]]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([parameter, "base_accuracy", "novel_accuracy", "harmonic_mean",
                     "correction_rate"])
    for value, report in results:
        writer.writerow([
            value,
            repr(report.trained.base_accuracy),
            repr(report.trained.novel_accuracy),
            repr(report.trained.hm),
            repr(report.correction_rate) if report.correction_rate is not None else "",
        ])
    return buffer.getvalue().encode("utf-8")
