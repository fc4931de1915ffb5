"""Minimal differentiable tensor kernel used throughout the package."""

from .clustering import KMeansResult, kmeans
from .gradcheck import GradCheckReport, finite_difference_check
from .kernels import (
    AttentionWeights,
    cosine_similarity,
    depthwise_conv2d,
    l2_normalize,
    l2_normalize_rows,
    layer_norm,
    multi_head_attention,
    softmax,
    softmax_array,
    softmax_rows,
    top_k,
)
from .tensor import (
    GradRecord,
    Tensor,
    backward,
    clamp_min,
    concat,
    exp,
    grad_enabled,
    log,
    matmul,
    narrow,
    no_grad,
    pow_const,
    reshape,
    sqrt,
    tanh,
    tensor_mean,
    tensor_sum,
    transpose,
)

__all__ = [
    "AttentionWeights",
    "GradCheckReport",
    "GradRecord",
    "KMeansResult",
    "Tensor",
    "backward",
    "clamp_min",
    "concat",
    "cosine_similarity",
    "depthwise_conv2d",
    "exp",
    "finite_difference_check",
    "grad_enabled",
    "kmeans",
    "l2_normalize",
    "l2_normalize_rows",
    "layer_norm",
    "log",
    "matmul",
    "multi_head_attention",
    "narrow",
    "no_grad",
    "pow_const",
    "reshape",
    "softmax",
    "softmax_array",
    "softmax_rows",
    "sqrt",
    "tanh",
    "tensor_mean",
    "tensor_sum",
    "top_k",
    "transpose",
]
