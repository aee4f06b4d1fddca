"""Central-difference gradient oracle.

Used by the test-suite and by ``stgt gradcheck`` to compare the tape's
analytic gradients against numerical ones.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import NumericDomainError, Tape, Tensor


def analytic_gradients(fn: Callable[[], Tensor], points: Sequence[Tensor]) -> list[np.ndarray]:
    for p in points:
        p.requires_grad = True
        p.zero_grad()
    with Tape() as tape:
        out = fn()
    if out.data.size != 1:
        raise ValueError("finite_difference_check needs a scalar-valued function")
    tape.backward(out)
    grads = []
    for p in points:
        g = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if not np.all(np.isfinite(g)):
            raise NumericDomainError(f"non-finite analytic gradient for {p!r}")
        grads.append(g)
    return grads


def numeric_gradients(fn: Callable[[], Tensor], points: Sequence[Tensor], epsilon: float) -> list[np.ndarray]:
    grads = []
    for p in points:
        if not p.data.flags.c_contiguous or not p.data.flags.writeable:
            p.data = np.array(p.data, order="C")
        flat = p.data.reshape(-1)
        g = np.empty_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            hi = fn().item()
            flat[k] = orig - epsilon
            lo = fn().item()
            flat[k] = orig
            g[k] = (hi - lo) / (2.0 * epsilon)
        if not np.all(np.isfinite(g)):
            raise NumericDomainError(f"non-finite numeric gradient for {p!r}")
        grads.append(g.reshape(p.shape))
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_difference_check(
    fn: Callable,
    point: Tensor | Sequence[Tensor],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` is called with ``point`` (a tensor or a sequence of tensors) and must
    return a scalar tensor. Points are perturbed in place and restored.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-4]")
    points = [point] if isinstance(point, Tensor) else list(point)
    call = (lambda: fn(point))
    analytic = analytic_gradients(call, points)
    numeric = numeric_gradients(call, points, epsilon)
    return max((relative_error(a, n) for a, n in zip(analytic, numeric)), default=0.0)
