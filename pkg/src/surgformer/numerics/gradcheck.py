"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad, reset_tape


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``param``."""
    flat = param.data.reshape(-1)
    out = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(param.shape)


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5):
    """Return (analytic, numeric) flat arrays over all entries of ``params``."""
    for p in params:
        p.grad = None
    reset_tape()
    loss = loss_fn()
    backward(loss)
    reset_tape()
    analytic = np.concatenate([
        (p.grad if p.grad is not None else np.zeros(p.shape)).reshape(-1) for p in params
    ])
    numeric = np.concatenate([numeric_grad(loss_fn, p, h).reshape(-1) for p in params])
    return analytic, numeric
