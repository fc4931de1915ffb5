"""Differentiable building blocks layered on the tensor core.

The hot kernels used inside training loops (row softmax, layer norm,
depthwise convolution) are fused primitives with hand-written backward
rules; everything else composes the generic ops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DegenerateInputError, ParameterError, ShapeError
from .tensor import (
    Tensor,
    _accumulate,
    _as_tensor,
    _from_op,
    concat,
    exp,
    matmul,
    sqrt,
    tensor_sum,
)


def softmax(x, temperature: float = 1.0) -> Tensor:
    """Temperature softmax over a 1-D tensor, stabilized by max subtraction."""
    x = _as_tensor(x)
    if x.data.ndim != 1 or x.data.size < 1:
        raise ShapeError(f"softmax expects a non-empty 1-D tensor, got shape {x.shape}")
    if temperature <= 0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    shifted = (x - float(x.data.max())) * (1.0 / temperature)
    e = exp(shifted)
    return e / e.sum()


def softmax_array(x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Plain-numpy counterpart of `softmax` for graph-free code paths."""
    if temperature <= 0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    z = (np.asarray(x, dtype=np.float64) - np.max(x)) / temperature
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(x, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax over a 2-D tensor (fused primitive)."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got shape {x.shape}")
    if temperature <= 0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    z = (x.data - x.data.max(axis=1, keepdims=True)) / temperature
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g, x=x, out=out, temperature=temperature):
        inner = (g * out).sum(axis=1, keepdims=True)
        _accumulate(x, (g - inner) * out / temperature)

    return _from_op(out, (x,), backward)


def cosine_similarity(u, v) -> Tensor:
    """cos(u, v) as a differentiable scalar; rejects zero-norm inputs."""
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.shape != v.data.shape or u.data.ndim != 1:
        raise ShapeError(f"cosine_similarity expects matching 1-D shapes, got {u.shape} and {v.shape}")
    if not np.linalg.norm(u.data) > 0 or not np.linalg.norm(v.data) > 0:
        raise DegenerateInputError("cosine_similarity is undefined for zero-norm input")
    dot = tensor_sum(u * v)
    return dot / (sqrt(tensor_sum(u * u)) * sqrt(tensor_sum(v * v)))


def l2_normalize(x) -> Tensor:
    """x / ||x|| for a 1-D tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"l2_normalize expects a 1-D tensor, got shape {x.shape}")
    norm = np.linalg.norm(x.data)
    if not norm > 0:
        raise DegenerateInputError("cannot normalize a zero-norm vector")
    return x / sqrt(tensor_sum(x * x))


def l2_normalize_rows(x) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"l2_normalize_rows expects a 2-D tensor, got shape {x.shape}")
    norms = np.linalg.norm(x.data, axis=1)
    if not np.all(norms > 0):
        raise DegenerateInputError("cannot normalize zero-norm rows")
    return x / sqrt(tensor_sum(x * x, axis=1, keepdims=True))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm expects a 2-D tensor, got shape {x.shape}")
    width = x.data.shape[1]
    if gain.data.shape != (width,) or bias.data.shape != (width,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match width {width}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    out = normed * gain.data + bias.data

    def backward(g, x=x, gain=gain, bias=bias, normed=normed, inv=inv):
        if gain.requires_grad:
            _accumulate(gain, (g * normed).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))
        if x.requires_grad:
            gn = g * gain.data
            term = gn - gn.mean(axis=1, keepdims=True) - normed * (gn * normed).mean(axis=1, keepdims=True)
            _accumulate(x, term * inv)

    return _from_op(out, (x, gain, bias), backward)


@dataclass
class AttentionWeights:
    """Projection matrices of one multi-head attention block (all D x D)."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


def multi_head_attention(q, k, v, heads: int, weights: AttentionWeights) -> Tensor:
    """Scaled dot-product attention with `heads` heads and output projection.

    Scale is 1/sqrt(D/heads); queries, keys and values are projected with the
    supplied D x D matrices and head outputs are concatenated before wo.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("attention inputs must be 2-D token matrices")
    dim = q.data.shape[1]
    if k.data.shape[1] != dim or v.data.shape[1] != dim:
        raise ShapeError(
            f"attention width mismatch: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    if k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(f"key/value row counts differ: {k.shape} vs {v.shape}")
    if heads < 1 or dim % heads != 0:
        raise ConfigurationError(f"width {dim} is not divisible by head count {heads}")
    head_dim = dim // heads
    scale = 1.0 / np.sqrt(head_dim)

    qp = matmul(q, weights.wq)
    kp = matmul(k, weights.wk)
    vp = matmul(v, weights.wv)
    outputs = []
    for h in range(heads):
        start = h * head_dim
        qh = qp.narrow(1, start, head_dim)
        kh = kp.narrow(1, start, head_dim)
        vh = vp.narrow(1, start, head_dim)
        scores = matmul(qh, kh.t()) * scale
        attn = softmax_rows(scores)
        outputs.append(matmul(attn, vh))
    joined = outputs[0] if heads == 1 else concat(outputs, axis=1)
    return matmul(joined, weights.wo)


def depthwise_conv2d(grid, kernels) -> Tensor:
    """Same-padded depthwise 2-D convolution over an R x C x D token grid.

    Channel j of the output depends only on channel j of the input; padding
    is zeros so the spatial extent is preserved. Kernel spatial size K must
    be odd.
    """
    grid, kernels = _as_tensor(grid), _as_tensor(kernels)
    if grid.data.ndim != 3 or kernels.data.ndim != 3:
        raise ShapeError(
            f"depthwise_conv2d expects 3-D grid and kernels, got {grid.shape} and {kernels.shape}"
        )
    ksize = kernels.data.shape[0]
    if kernels.data.shape[1] != ksize:
        raise ShapeError(f"kernel spatial extent must be square, got {kernels.shape}")
    if ksize % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {ksize}")
    if kernels.data.shape[2] != grid.data.shape[2]:
        raise ShapeError(
            f"channel counts differ: grid {grid.shape} vs kernels {kernels.shape}"
        )
    rows, cols, depth = grid.data.shape
    pad = ksize // 2
    padded = np.zeros((rows + 2 * pad, cols + 2 * pad, depth))
    padded[pad:pad + rows, pad:pad + cols, :] = grid.data
    out = np.zeros((rows, cols, depth))
    for i in range(ksize):
        for j in range(ksize):
            out += padded[i:i + rows, j:j + cols, :] * kernels.data[i, j, :]

    def backward(g, grid=grid, kernels=kernels, padded=padded, pad=pad, ksize=ksize):
        rows, cols, _ = grid.data.shape
        if grid.requires_grad:
            gpad = np.zeros_like(padded)
            for i in range(ksize):
                for j in range(ksize):
                    gpad[i:i + rows, j:j + cols, :] += g * kernels.data[i, j, :]
            _accumulate(grid, gpad[pad:pad + rows, pad:pad + cols, :])
        if kernels.requires_grad:
            gk = np.zeros_like(kernels.data)
            for i in range(ksize):
                for j in range(ksize):
                    gk[i, j, :] = (g * padded[i:i + rows, j:j + cols, :]).sum(axis=(0, 1))
            _accumulate(kernels, gk)

    return _from_op(out, (grid, kernels), backward)


def top_k(x, k: int) -> list[tuple[int, float]]:
    """The k largest entries as (index, value), descending, ties to lower index."""
    values = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if values.ndim != 1:
        raise ShapeError(f"top_k expects a 1-D input, got shape {values.shape}")
    n = values.size
    if k < 1 or k > n:
        raise ParameterError(f"top_k count {k} outside [1, {n}]")
    order = np.argsort(-values, kind="stable")
    return [(int(i), float(values[i])) for i in order[:k]]
