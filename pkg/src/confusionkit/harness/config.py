"""Training configuration with JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigurationError


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 4
    pairs_c: int = 5
    temperature: float = 0.07
    learning_rate: float = 0.01
    anchor_decay: float = 0.25
    seed: int = 0
    train_shots: int = 16
    expert_top_k: int = 2
    prompt_clusters: int = 4
    expert_hidden: int = 64
    attention_heads: int = 2
    conv_kernel_size: int = 3
    mask_probability: float = 0.1
    alpha_scale: float = 5.0
    alpha_exponent: float = 0.5
    loss_mode: str = "confuse_only"  # or "confuse_plus_ori"
    ori_weight: float = 0.1
    reps_per_category: int = 1
    representative_mode: str = "similarity"  # or "random"
    query_mode: str = "full_sequence"  # or "cls_only"
    use_sem: bool = True
    use_sam: bool = True
    use_mgde: bool = True
    text_prompt_mix: float = 0.25
    noise_level: float = 0.0
    external_prompts_path: str | None = None

    def validate(self) -> None:
        positives = {
            "epochs": self.epochs, "batch_size": self.batch_size,
            "pairs_c": self.pairs_c, "temperature": self.temperature,
            "learning_rate": self.learning_rate, "train_shots": self.train_shots,
            "expert_top_k": self.expert_top_k, "prompt_clusters": self.prompt_clusters,
            "expert_hidden": self.expert_hidden, "attention_heads": self.attention_heads,
            "reps_per_category": self.reps_per_category,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if self.anchor_decay < 0:
            raise ConfigurationError(f"anchor_decay must be non-negative, got {self.anchor_decay}")
        if self.alpha_scale <= 1:
            raise ConfigurationError(f"alpha_scale must exceed 1, got {self.alpha_scale}")
        if self.alpha_exponent <= 0:
            raise ConfigurationError(f"alpha_exponent must be positive, got {self.alpha_exponent}")
        if self.loss_mode not in ("confuse_only", "confuse_plus_ori"):
            raise ConfigurationError(f"unknown loss mode {self.loss_mode!r}")
        if self.representative_mode not in ("similarity", "random"):
            raise ConfigurationError(f"unknown representative mode {self.representative_mode!r}")
        if self.query_mode not in ("full_sequence", "cls_only"):
            raise ConfigurationError(f"unknown query mode {self.query_mode!r}")
        if not 0 <= self.mask_probability <= 1:
            raise ConfigurationError(
                f"mask_probability must lie in [0, 1], got {self.mask_probability}"
            )
        if not 0 <= self.noise_level <= 1:
            raise ConfigurationError(f"noise_level must lie in [0, 1], got {self.noise_level}")
        if self.conv_kernel_size % 2 == 0:
            raise ConfigurationError(
                f"conv_kernel_size must be odd, got {self.conv_kernel_size}"
            )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown training config fields: {sorted(unknown)}")
        config = cls(**data)
        config.validate()
        return config

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, **kwargs) -> "TrainConfig":
        config = replace(self, **kwargs)
        config.validate()
        return config
