from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative error ``|a - b| / (|a| + |b|)``; 0 when both vanish."""
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = fn().item()
        flat[i] = old - step
        fm = fn().item()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def analytic_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for x in inputs:
        x.requires_grad = True
        x.grad = np.zeros_like(x.data)
    with Tape() as tape:
        loss = fn()
        backward(tape, loss)
    return [x.grad.copy() for x in inputs]


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-5) -> float:
    """Largest relative error between tape gradients and central differences."""
    grads = analytic_grads(fn, inputs)
    worst = 0.0
    for x, ga in zip(inputs, grads):
        worst = max(worst, relative_error(ga, numeric_grad(fn, x, step)))
    return worst
