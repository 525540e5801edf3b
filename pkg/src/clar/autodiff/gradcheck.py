from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from clar.autodiff.tensor import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """||a - n|| / max(||a||, ||n||, floor)."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def numeric_grad(f: Callable[[], float], p: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of ``f`` with respect to every entry of ``p``."""
    base = p.data.copy()
    out = np.zeros_like(base)
    flat = out.reshape(-1)
    for i in range(base.size):
        bumped = base.copy().reshape(-1)
        bumped[i] += h
        p.data = bumped.reshape(base.shape)
        up = f()
        bumped[i] -= 2 * h
        p.data = bumped.reshape(base.shape)
        down = f()
        flat[i] = (up - down) / (2 * h)
    p.data = base
    return out


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4,
) -> dict[int, float]:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    Returns the relative error per parameter index.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def value() -> float:
        return float(loss_fn().data)

    return {i: relative_error(analytic[i], numeric_grad(value, p, h)) for i, p in enumerate(params)}
