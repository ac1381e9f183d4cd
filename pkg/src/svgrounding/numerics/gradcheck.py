"""Central finite-difference checks for analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().data.sum())
        flat[i] = orig - h
        down = float(fn().data.sum())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


ABS_FLOOR = 1e-5


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    # gradients that vanish analytically (e.g. attention key biases) are
    # compared against the floor instead of against finite-difference noise
    scale = max(np.linalg.norm(a), np.linalg.norm(b), ABS_FLOOR)
    return float(np.linalg.norm(a - b) / scale)


def check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error between backward() and central differences.

    ``fn`` must rebuild the graph from ``inputs`` on every call and return a
    scalar (non-scalar outputs are summed).
    """
    for x in inputs:
        x.grad = None
    out = fn()
    if out.data.size != 1:
        from .tensor import tsum
        out = tsum(out)
    out.backward()
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        worst = max(worst, relative_error(analytic, numeric_grad(fn, x, h)))
    return worst
