"""Three-expert top-K fusion over the mined confusion feature.

Two semantic experts (commonality and difference) and one sample-level
expert share nothing: each owns a residual two-layer feed-forward block.
A routing matrix scores the input feature, the top-K logits are softmaxed
among themselves, and the gated expert outputs are summed. During training
an activated expert's input cue may be swapped for a random unit vector,
which forces the experts to carry task knowledge rather than echo the cue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParameterError
from .numerics import (
    GradRecord,
    Tensor,
    concat,
    kmeans,
    matmul,
    reshape,
    softmax,
    tanh,
    top_k,
)

EXPERT_ROLES = ("semantic_commonality", "semantic_difference", "sample")


@dataclass
class ExpertParams:
    role: str
    w1: Tensor  # (D, H), column j is unit j's incoming weight vector
    b1: Tensor  # (H,)
    w2: Tensor  # (H, D)
    b2: Tensor  # (D,)


@dataclass
class RouterParams:
    w_r: Tensor  # (D, E)
    top_k: int


def expert_forward(feature: Tensor, params: ExpertParams) -> Tensor:
    """Residual feed-forward expert: f + tanh(f W1 + b1) W2 + b2."""
    row = reshape(feature, (1, feature.data.shape[0]))
    hidden = tanh(matmul(row, params.w1) + params.b1)
    out = matmul(hidden, params.w2) + params.b2
    return feature + reshape(out, (feature.data.shape[0],))


def compress_prompts(prompt_vectors: np.ndarray, k: int, projection: Tensor, seed: int = 0) -> Tensor:
    """Cluster prompt embeddings and project the centroids into expert space.

    The centroids are constants of the clustering; gradients flow through
    the projection only.
    """
    prompt_vectors = np.asarray(prompt_vectors, dtype=np.float64)
    if prompt_vectors.ndim != 2:
        raise ParameterError(f"prompt pool must be n x d, got shape {prompt_vectors.shape}")
    if k > prompt_vectors.shape[0]:
        raise ParameterError(
            f"cannot form {k} clusters from {prompt_vectors.shape[0]} prompt embeddings"
        )
    result = kmeans(prompt_vectors, k, seed=seed)
    return matmul(Tensor(result.centroids), projection)


def _fill_first_columns(matrix: np.ndarray, block: np.ndarray) -> None:
    cols = min(block.shape[0], matrix.shape[1])
    matrix[:, :cols] = block[:cols].T


def init_experts(
    record: GradRecord,
    world,
    commonality_pool: np.ndarray,
    difference_pool: np.ndarray,
    projection: Tensor,
    clusters: int,
    hidden: int,
    seed: int,
    rng: np.random.Generator,
    prefix: str = "experts",
) -> list[ExpertParams]:
    """Build the three experts with role-specific first-layer initialization.

    Semantic experts seed their first `clusters` hidden units from the
    projected centroids of their prompt pools; the sample expert copies the
    frozen encoder projection. Second layers are random at a small scale so
    the fused output starts close to the identity.
    """
    if hidden < clusters:
        raise ConfigurationError(
            f"hidden width {hidden} cannot hold {clusters} centroid-initialized units"
        )
    dim = projection.data.shape[1]
    pools = {
        "semantic_commonality": commonality_pool,
        "semantic_difference": difference_pool,
    }
    experts: list[ExpertParams] = []
    for role in EXPERT_ROLES:
        w1 = rng.standard_normal((dim, hidden)) / np.sqrt(dim)
        if role == "sample":
            _fill_first_columns(w1, np.asarray(world.image_projection).T)
        else:
            pool = np.asarray(pools[role], dtype=np.float64)
            if pool.ndim != 2 or pool.shape[0] == 0:
                raise ConfigurationError(f"missing prompt pool for {role}")
            centroids = compress_prompts(pool, min(clusters, pool.shape[0]), projection, seed=seed)
            _fill_first_columns(w1, centroids.data)
        experts.append(ExpertParams(
            role=role,
            w1=record.parameter(f"{prefix}.{role}.w1", w1),
            b1=record.parameter(f"{prefix}.{role}.b1", np.zeros(hidden)),
            w2=record.parameter(f"{prefix}.{role}.w2",
                                0.05 * rng.standard_normal((hidden, dim)) / np.sqrt(hidden)),
            b2=record.parameter(f"{prefix}.{role}.b2", np.zeros(dim)),
        ))
    return experts


def init_router(record: GradRecord, dim: int, top_count: int, rng: np.random.Generator,
                n_experts: int = len(EXPERT_ROLES), prefix: str = "router") -> RouterParams:
    if not 1 <= top_count <= n_experts:
        raise ConfigurationError(f"top-K count {top_count} outside [1, {n_experts}]")
    return RouterParams(
        w_r=record.parameter(f"{prefix}.w_r", (dim, n_experts), rng),
        top_k=top_count,
    )


def route_and_fuse(
    feature: Tensor,
    router: RouterParams,
    experts: list[ExpertParams],
    top_count: int | None = None,
    expert_inputs: dict[int, Tensor] | None = None,
) -> tuple[Tensor, list[tuple[int, float]]]:
    """Top-K gated sum of expert outputs.

    Gate weights are a softmax over exactly the selected logits, so they sum
    to one and gradients reach only the selected experts. `expert_inputs`
    overrides the input cue of individual experts (used by training-time
    masking); routing always scores the true feature.
    """
    k = router.top_k if top_count is None else top_count
    if not 1 <= k <= len(experts):
        raise ConfigurationError(f"top-K count {k} outside [1, {len(experts)}]")
    dim = feature.data.shape[0]
    logits = matmul(reshape(feature, (1, dim)), router.w_r)
    selected = [idx for idx, _ in top_k(logits.data[0], k)]
    picked = concat([logits.narrow(1, idx, 1) for idx in selected], axis=1)
    gates = softmax(reshape(picked, (k,)))
    report = [(idx, float(gates.data[j])) for j, idx in enumerate(selected)]

    out: Tensor | None = None
    for j, idx in enumerate(selected):
        cue = feature if expert_inputs is None else expert_inputs.get(idx, feature)
        term = expert_forward(cue, experts[idx]) * gates.narrow(0, j, 1)
        out = term if out is None else out + term
    return out, report


def mask_training_step(
    feature: Tensor,
    activated: list[int],
    p_mask: float,
    rng: np.random.Generator,
) -> dict[int, Tensor]:
    """Randomly replace activated experts' input cues with unit noise.

    Each activated expert independently gets a fresh unit-norm random vector
    with probability p_mask; the returned overrides feed route_and_fuse.
    Inference never calls this.
    """
    if not 0 <= p_mask <= 1:
        raise ParameterError(f"mask probability must lie in [0, 1], got {p_mask}")
    overrides: dict[int, Tensor] = {}
    if p_mask == 0:
        return overrides
    dim = feature.data.shape[0]
    for idx in activated:
        if rng.random() < p_mask:
            v = rng.standard_normal(dim)
            overrides[idx] = Tensor(v / np.linalg.norm(v))
    return overrides
