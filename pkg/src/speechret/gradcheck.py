"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor

REL_ERROR_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    op: str
    max_rel_error: float
    elements: int
    epsilon: float

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol

    def line(self, tol: float = 1e-4) -> str:
        status = "PASS" if self.passed(tol) else "FAIL"
        return (f"{status}  {self.op:<40s} max_rel_err={self.max_rel_error:.3e}  "
                f"elements={self.elements}  eps={self.epsilon:g}")


def grad_check(fn, inputs: list[Tensor], epsilon: float = 1e-5,
               name: str = "") -> GradCheckReport:
    """Compare analytic gradients of ``fn(*inputs)`` against central differences.

    ``fn`` must be a pure function returning a scalar Tensor. Every input
    with ``requires_grad`` is perturbed elementwise. Inputs must be double
    precision; single precision cannot resolve the differences.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ConfigError("grad_check requires float64 inputs")

    out = fn(*inputs)
    if out.data.shape != ():
        raise ConfigError("grad_check target must return a scalar")
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    out.backward()
    analytic = [None if not t.requires_grad else
                (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for t in inputs]

    max_rel = 0.0
    count = 0
    for t, a_grad in zip(inputs, analytic):
        if a_grad is None:
            continue
        flat = t.data.reshape(-1)
        a_flat = a_grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = fn(*inputs).item()
            flat[i] = orig - epsilon
            lo = fn(*inputs).item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * epsilon)
            denom = max(abs(a_flat[i]), abs(numeric), REL_ERROR_FLOOR)
            max_rel = max(max_rel, abs(a_flat[i] - numeric) / denom)
            count += 1

    return GradCheckReport(op=name or getattr(fn, "__name__", "fn"),
                           max_rel_error=max_rel, elements=count, epsilon=epsilon)
