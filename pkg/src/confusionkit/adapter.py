"""Sample-level confusion mining and the global/local adapter.

For every confusable category the bank record most similar to the current
instance is retained as its representative. Each token sequence then passes
through an adapter that mixes a global attention branch (the CLS row attends
over the whole sequence) with a local depthwise-convolution branch over the
patch grid; the local branch is weighted by a per-sample intensity-driven
alpha. Instance and representative CLS outputs fuse into one unit feature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bank import ConfusionBank, ConfusionRecord
from .errors import ConfigurationError, ShapeError, UsageError
from .numerics import (
    AttentionWeights,
    GradRecord,
    Tensor,
    concat,
    depthwise_conv2d,
    l2_normalize,
    layer_norm,
    multi_head_attention,
    reshape,
    softmax_array,
)
from .semantic import ConfusionPairSet
from .world import World


@dataclass
class RepresentativeEntry:
    record: ConfusionRecord
    intensity: float      # cosine similarity to the instance feature
    alpha: float          # local-branch weight derived from the intensity
    tokens: np.ndarray | None = None  # encoded token sequence, filled on attach


@dataclass
class RepresentativeSet:
    entries: list[RepresentativeEntry]
    skipped_categories: list[int] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.entries

    def mean_alpha(self) -> float:
        if not self.entries:
            return 0.0
        return float(np.mean([e.alpha for e in self.entries]))

    def fusion_weights(self) -> np.ndarray:
        """Softmax over intensities at unit temperature."""
        return softmax_array(np.array([e.intensity for e in self.entries]), 1.0)


def dynamic_alpha(intensity: float, scale: float, exponent: float) -> float:
    """alpha = scale * max(intensity, 0) ** exponent.

    Negative intensities clamp to zero: a representative that points away
    from the instance should not drive the local branch.
    """
    if scale <= 1.0:
        raise ConfigurationError(f"alpha scale must exceed 1, got {scale}")
    if exponent <= 0.0:
        raise ConfigurationError(f"alpha exponent must be positive, got {exponent}")
    return scale * max(intensity, 0.0) ** exponent


def representative_samples(
    instance_feature: np.ndarray,
    pair_set: ConfusionPairSet,
    bank: ConfusionBank,
    alpha_scale: float = 5.0,
    alpha_exponent: float = 0.5,
    per_category: int = 1,
    rng: np.random.Generator | None = None,
) -> RepresentativeSet:
    """Pick the bank record(s) most similar to the instance per pair category.

    Scans retrieve(pseudo_gt, category) for each confusable category and
    keeps the top `per_category` records by cosine similarity (ties toward
    the lower sample id). Categories with no banked records are skipped and
    reported. Passing an rng switches to uniform random selection (the
    ablation baseline).
    """
    if per_category < 1:
        raise ConfigurationError(f"per_category must be at least 1, got {per_category}")
    instance_feature = np.asarray(instance_feature, dtype=np.float64)
    inorm = np.linalg.norm(instance_feature)
    entries: list[RepresentativeEntry] = []
    skipped: list[int] = []
    for category, _ in pair_set.pairs:
        records = bank.retrieve(pair_set.pseudo_gt, category)
        if not records:
            skipped.append(category)
            continue
        scored = []
        for rec in records:
            denom = inorm * np.linalg.norm(rec.feature)
            sim = float(instance_feature @ rec.feature / denom) if denom > 0 else 0.0
            scored.append((sim, rec))
        if rng is None:
            scored.sort(key=lambda sr: (-sr[0], sr[1].sample_id))
            chosen = scored[:per_category]
        else:
            picks = rng.choice(len(scored), size=min(per_category, len(scored)), replace=False)
            chosen = [scored[int(i)] for i in picks]
        for sim, rec in chosen:
            entries.append(RepresentativeEntry(
                record=rec, intensity=sim,
                alpha=dynamic_alpha(sim, alpha_scale, alpha_exponent),
            ))
    return RepresentativeSet(entries=entries, skipped_categories=skipped)


@dataclass
class AdapterParams:
    """Trainable state of the adapter plus its structural configuration."""

    ln_gain: Tensor
    ln_bias: Tensor
    attention: AttentionWeights
    conv_kernels: Tensor
    heads: int
    grid: tuple[int, int]
    query_mode: str = "full_sequence"  # or "cls_only"


def init_adapter(
    record: GradRecord,
    dim: int,
    heads: int,
    grid: tuple[int, int],
    rng: np.random.Generator,
    kernel_size: int = 3,
    query_mode: str = "full_sequence",
    prefix: str = "adapter",
) -> AdapterParams:
    """Register adapter parameters.

    The output projection starts at zero so the whole block is the identity
    map initially; training opens the attention and convolution branches.
    """
    if heads < 1 or dim % heads != 0:
        raise ConfigurationError(f"width {dim} is not divisible by head count {heads}")
    if kernel_size % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {kernel_size}")
    if query_mode not in ("full_sequence", "cls_only"):
        raise ConfigurationError(f"unknown query mode {query_mode!r}")
    attention = AttentionWeights(
        wq=record.parameter(f"{prefix}.wq", (dim, dim), rng),
        wk=record.parameter(f"{prefix}.wk", (dim, dim), rng),
        wv=record.parameter(f"{prefix}.wv", (dim, dim), rng),
        wo=record.parameter(f"{prefix}.wo", np.zeros((dim, dim))),
    )
    kernels = record.parameter(
        f"{prefix}.conv", (kernel_size, kernel_size, dim), rng,
        scale=1.0 / (kernel_size * kernel_size),
    )
    return AdapterParams(
        ln_gain=record.parameter(f"{prefix}.ln_gain", np.ones(dim)),
        ln_bias=record.parameter(f"{prefix}.ln_bias", np.zeros(dim)),
        attention=attention,
        conv_kernels=kernels,
        heads=heads,
        grid=grid,
        query_mode=query_mode,
    )


def adapter_forward(tokens, alpha: float, params: AdapterParams) -> Tensor:
    """Global/local adapter over one (N+1) x D token sequence.

    The normalized sequence feeds multi-head attention (CLS participating as
    a query); the patch rows of the attention output are reshaped onto the
    grid, depthwise-convolved, and added back to the input patches scaled by
    alpha. The CLS row takes the attention branch directly; the convolution
    residual never touches it.
    """
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if tokens.data.ndim != 2:
        raise ShapeError(f"adapter expects a 2-D token sequence, got {tokens.shape}")
    rows, dim = tokens.data.shape
    grid_r, grid_c = params.grid
    if rows != grid_r * grid_c + 1:
        raise ConfigurationError(
            f"token sequence has {rows} rows but the {grid_r}x{grid_c} grid plus CLS needs "
            f"{grid_r * grid_c + 1}"
        )
    normed = layer_norm(tokens, params.ln_gain, params.ln_bias)
    if params.query_mode == "full_sequence":
        attended = multi_head_attention(normed, normed, normed, params.heads, params.attention)
        attn_cls = attended.narrow(0, 0, 1)
        attn_patches = attended.narrow(0, 1, rows - 1)
    else:
        # literal reading: only the CLS row queries; patches skip attention
        attn_cls = multi_head_attention(
            normed.narrow(0, 0, 1), normed, normed, params.heads, params.attention
        )
        attn_patches = normed.narrow(0, 1, rows - 1)
    grid = reshape(attn_patches, (grid_r, grid_c, dim))
    local = depthwise_conv2d(grid, params.conv_kernels)
    local_flat = reshape(local, (rows - 1, dim))
    out_patches = tokens.narrow(0, 1, rows - 1) + local_flat * float(alpha)
    out_cls = tokens.narrow(0, 0, 1) + attn_cls
    return concat([out_cls, out_patches], axis=0)


def sample_confusion_feature(
    instance_tokens,
    reps: RepresentativeSet,
    params: AdapterParams,
    noise: "RepresentativeNoise | None" = None,
) -> Tensor:
    """Fuse instance and representative CLS features into one unit vector.

    The instance runs the adapter at the mean representative alpha; each
    representative runs at its own alpha. Fusion weights are the softmax of
    the intensities, so permuting representatives leaves the result alone.
    """
    if reps.empty:
        raise UsageError(
            "sample_confusion_feature needs at least one representative; "
            "gate on RepresentativeSet.empty first"
        )
    instance_out = adapter_forward(instance_tokens, reps.mean_alpha(), params)
    dim = instance_out.data.shape[1]
    fused = reshape(instance_out.narrow(0, 0, 1), (dim,))
    weights = reps.fusion_weights()
    for weight, entry in zip(weights, reps.entries):
        if entry.tokens is None:
            raise UsageError("representative entry has no attached token sequence")
        tokens = entry.tokens if noise is None else noise.apply(entry.tokens)
        rep_out = adapter_forward(tokens, entry.alpha, params)
        fused = fused + reshape(rep_out.narrow(0, 0, 1), (dim,)) * float(weight)
    return l2_normalize(fused)


class RepresentativeNoise:
    """Gaussian corruption of representative token sequences.

    The per-entry standard deviation is level * rms(tokens) * sqrt(D), i.e.
    at level 0.1 the noise carries roughly a third of the tokens' energy.
    Draws come from the supplied generator, so runs stay seed-deterministic;
    level 0 is an exact no-op that consumes no randomness.
    """

    def __init__(self, level: float, rng: np.random.Generator):
        if level < 0 or level > 1:
            raise ConfigurationError(f"noise level must lie in [0, 1], got {level}")
        self.level = level
        self._rng = rng

    def apply(self, tokens: np.ndarray) -> np.ndarray:
        if self.level == 0:
            return tokens
        scale = self.level * float(np.sqrt(np.mean(tokens ** 2))) * np.sqrt(tokens.shape[1])
        return tokens + scale * self._rng.standard_normal(tokens.shape)


def attach_tokens(reps: RepresentativeSet, world: World) -> None:
    """Resolve each representative's token reference to its encoded sequence."""
    from .world import encode_image

    for entry in reps.entries:
        tokens, _ = encode_image(world, entry.record.token_ref)
        entry.tokens = tokens
