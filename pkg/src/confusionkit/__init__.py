"""Confusion-aware prompt tuning on a synthetic vision-language world.

The package builds a deterministic world with planted confusable category
pairs, indexes the frozen baseline's misclassifications in a bank, mines
confusion at the semantic and sample level, and trains a small adapter,
a three-expert mixture and a text projection against a symmetric InfoNCE
objective, all on a from-scratch differentiable tensor kernel.
"""

from .bank import BankProvenance, ConfusionBank, ConfusionRecord, build_bank
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    FormatError,
    ParameterError,
    ShapeError,
    UsageError,
)
from .harness import TrainConfig, evaluate, train
from .world import (
    World,
    WorldSpec,
    baseline_classify,
    encode_image,
    encode_text,
    generate_world,
    load_world,
    save_world,
)

__version__ = "0.1.0"

__all__ = [
    "BankProvenance",
    "ConfigurationError",
    "ConfusionBank",
    "ConfusionRecord",
    "DegenerateInputError",
    "FormatError",
    "ParameterError",
    "ShapeError",
    "TrainConfig",
    "UsageError",
    "World",
    "WorldSpec",
    "__version__",
    "baseline_classify",
    "build_bank",
    "encode_image",
    "encode_text",
    "evaluate",
    "generate_world",
    "load_world",
    "save_world",
    "train",
]
