"""Training, evaluation, reporting and sweep machinery."""

from .ablation import noise_ablation, results_csv_bytes, sweep
from .config import TrainConfig
from .losses import harmonic_mean, loss_confuse, loss_ori
from .reporting import (
    heatmap_csv_bytes,
    heatmap_pgm_bytes,
    heatmap_report,
    loss_curve_csv_bytes,
    parse_heatmap_csv,
    write_run_dir,
)
from .trainer import (
    EvalResult,
    PipelineModel,
    Report,
    batch_loss,
    build_mining_cache,
    build_model,
    confusion_matrix_from_bank,
    confusion_matrix_of,
    correction_rate,
    evaluate,
    evaluate_baseline,
    load_checkpoint,
    save_checkpoint,
    select_training_ids,
    train,
)

__all__ = [
    "EvalResult",
    "PipelineModel",
    "Report",
    "TrainConfig",
    "batch_loss",
    "build_mining_cache",
    "build_model",
    "confusion_matrix_from_bank",
    "confusion_matrix_of",
    "correction_rate",
    "evaluate",
    "evaluate_baseline",
    "harmonic_mean",
    "heatmap_csv_bytes",
    "heatmap_pgm_bytes",
    "heatmap_report",
    "load_checkpoint",
    "loss_confuse",
    "loss_curve_csv_bytes",
    "loss_ori",
    "noise_ablation",
    "parse_heatmap_csv",
    "results_csv_bytes",
    "save_checkpoint",
    "select_training_ids",
    "sweep",
    "train",
    "write_run_dir",
]
