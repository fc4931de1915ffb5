"""Training objectives: cross-entropy and the symmetric paired InfoNCE."""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError, UsageError
from ..numerics import (
    Tensor,
    clamp_min,
    concat,
    l2_normalize_rows,
    log,
    matmul,
    reshape,
    softmax_rows,
    tensor_sum,
    transpose,
)

LOG_FLOOR = 1e-12


def loss_ori(prediction: Tensor, one_hot: np.ndarray) -> Tensor:
    """Cross-entropy of a confidence distribution against a one-hot label."""
    one_hot = np.asarray(one_hot, dtype=np.float64)
    if prediction.data.shape != one_hot.shape or prediction.data.ndim != 1:
        raise ParameterError(
            f"prediction {prediction.shape} and label {one_hot.shape} must be matching vectors"
        )
    if not np.isclose(one_hot.sum(), 1.0) or not set(np.unique(one_hot)) <= {0.0, 1.0}:
        raise ParameterError("label must be one-hot")
    picked = tensor_sum(log(clamp_min(prediction, LOG_FLOOR)) * one_hot)
    return -picked


def loss_confuse(image_features: list[Tensor], text_features: list[Tensor], tau: float) -> Tensor:
    """Symmetric InfoNCE over L matched (image, text) feature pairs.

    Entry i of each list is a positive pair; all other entries of the
    opposite list act as its negatives. Both directions (image anchored and
    text anchored) contribute. With a single pair the loss is exactly zero;
    if every similarity coincides it equals 2 ln L.
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if len(image_features) != len(text_features):
        raise UsageError(
            f"matched lists must have equal length, got {len(image_features)} and {len(text_features)}"
        )
    count = len(image_features)
    if count == 0:
        raise UsageError("loss_confuse needs at least one matched pair")

    dim = image_features[0].data.shape[0]
    img = l2_normalize_rows(concat([reshape(f, (1, dim)) for f in image_features], axis=0))
    txt = l2_normalize_rows(concat([reshape(f, (1, dim)) for f in text_features], axis=0))
    sims = matmul(img, transpose(txt)) * (1.0 / tau)

    eye = np.eye(count)
    image_anchored = tensor_sum(log(clamp_min(softmax_rows(sims), LOG_FLOOR)) * eye)
    text_anchored = tensor_sum(log(clamp_min(softmax_rows(transpose(sims)), LOG_FLOOR)) * eye)
    return -(image_anchored + text_anchored) * (1.0 / count)


def harmonic_mean(a: float, b: float) -> float:
    if a < 0 or b < 0:
        raise ParameterError("harmonic mean is defined for non-negative accuracies")
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)
