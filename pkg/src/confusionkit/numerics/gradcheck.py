"""Central finite-difference audit of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ParameterError
from .tensor import GradRecord, Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    per_parameter: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def max_relative_error(self) -> float:
        return max(self.per_parameter.values()) if self.per_parameter else 0.0

    @property
    def ok(self) -> bool:
        return not self.failures


def finite_difference_check(
    fn: Callable[[], Tensor],
    params: GradRecord | dict[str, Tensor],
    step: float = 1e-3,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of fn() against central differences.

    fn must be a zero-argument callable that recomputes the scalar loss from
    the current parameter values. For every scalar entry of every parameter
    the relative error |analytic - numeric| / max(1, |numeric|) is taken; a
    parameter is flagged when its worst entry exceeds the tolerance.
    """
    if not 0 < step < 1:
        raise ParameterError(f"finite-difference step must lie in (0, 1), got {step}")

    if isinstance(params, GradRecord):
        named = dict(params.items())
        record = params
    else:
        named = dict(params)
        record = GradRecord()
        for name, tensor in named.items():
            record._params[name] = tensor  # reuse the existing tensors

    loss = fn()
    analytic = backward(loss, record)

    report = GradCheckReport(step=step, tolerance=tolerance)
    with no_grad():
        for name, tensor in named.items():
            flat = tensor.data.reshape(-1)
            grad_flat = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + step
                f_plus = fn().item()
                flat[i] = original - step
                f_minus = fn().item()
                flat[i] = original
                numeric = (f_plus - f_minus) / (2.0 * step)
                rel = abs(grad_flat[i] - numeric) / max(1.0, abs(numeric))
                if rel > worst:
                    worst = rel
            report.per_parameter[name] = worst
            if worst > tolerance:
                report.failures.append(name)
    return report
