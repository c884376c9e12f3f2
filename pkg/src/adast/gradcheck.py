"""Central finite-difference oracle for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def analytic_grads(f: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.grad = None
    backward(f())
    return [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]


def numeric_grads(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    out = []
    for t in inputs:
        g = np.zeros(t.shape)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    """max|a - n| over all inputs, scaled by the largest gradient magnitude seen.

    A single shared scale keeps parameters whose exact gradient is zero
    (a bias feeding batch norm, say) from dividing rounding noise by itself.
    """
    scale = max(max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
                for a, n in zip(analytic, numeric))
    if scale == 0.0:
        return 0.0
    return max(float(np.abs(a - n).max(initial=0.0)) for a, n in zip(analytic, numeric)) / scale


def max_relative_error(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst analytic-vs-numeric gradient mismatch over ``inputs``.

    ``f`` must rebuild the graph from the inputs on every call.
    """
    return relative_error(analytic_grads(f, inputs), numeric_grads(f, inputs, h))
