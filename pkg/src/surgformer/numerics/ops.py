"""Differentiable primitives.

Broadcasting is limited to the bias-add pattern: the second operand's shape
must equal a trailing suffix of the first operand's shape.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_result


def _lead_axes(big: tuple, small: tuple) -> tuple:
    return tuple(range(len(big) - len(small)))


def _suffix_ok(big: tuple, small: tuple) -> bool:
    return len(small) <= len(big) and tuple(big[len(big) - len(small):]) == tuple(small)


def _binary_layout(op, a, b):
    """Return (swap, lead_axes) for a broadcast-limited binary op."""
    if a.shape == b.shape:
        return False, ()
    if _suffix_ok(a.shape, b.shape):
        return False, _lead_axes(a.shape, b.shape)
    if _suffix_ok(b.shape, a.shape):
        return True, _lead_axes(b.shape, a.shape)
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    swap, lead = _binary_layout("add", a, b)

    def bwd(g):
        if swap:
            return g.sum(axis=lead) if lead else g, g
        return g, (g.sum(axis=lead) if lead else g)

    return make_result("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    swap, lead = _binary_layout("sub", a, b)

    def bwd(g):
        if swap:
            return (g.sum(axis=lead) if lead else g), -g
        return g, -(g.sum(axis=lead) if lead else g)

    return make_result("sub", a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    swap, lead = _binary_layout("mul", a, b)
    ad, bd = a.data, b.data

    def bwd(g):
        ga, gb = g * bd, g * ad
        if lead:
            if swap:
                ga = ga.sum(axis=lead)
            else:
                gb = gb.sum(axis=lead)
        return ga, gb

    return make_result("mul", ad * bd, (a, b), bwd)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_result("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` (shared right operand) or batched with equal leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not agree")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        # Fold leading axes into one GEMM; numpy would otherwise loop per batch.
        k, n = bd.shape
        a2 = ad.reshape(-1, k)
        out = (a2 @ bd).reshape(*ad.shape[:-1], n)

        def bwd(g):
            g2 = g.reshape(-1, n)
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

    elif a.shape[:-2] == b.shape[:-2]:
        out = ad @ bd

        def bwd(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    else:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} differ")
    return make_result("matmul", out, (a, b), bwd)


def transpose(a, axes=None) -> Tensor:
    """Permute axes; default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need ndim >= 2, got shape {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return make_result("reshape", out, (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: no operands")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: shapes {[t.shape for t in ts]} on axis {axis}") from exc
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bwd(g):
        return np.split(g, cuts, axis=axis)

    return make_result("concat", out, ts, bwd)


def getitem(a, key) -> Tensor:
    """Basic (non-fancy) indexing."""
    a = as_tensor(a)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return make_result("slice", a.data[key], (a,), bwd)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    axis = axis % a.ndim
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError(f"slice: [{start}:{stop}] outside axis {axis} of shape {a.shape}")
    key = (slice(None),) * axis + (slice(start, stop),)
    return getitem(a, key)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result("relu", a.data * mask, (a,), lambda g: (g * mask,))


def sqrt(a) -> Tensor:
    """Square root with a zero subgradient at 0."""
    a = as_tensor(a)
    y = np.sqrt(a.data)

    def bwd(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(y > 0, 0.5 / np.where(y > 0, y, 1.0), 0.0)
        return (g * d,)

    return make_result("sqrt", y, (a,), bwd)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", y, (x,), bwd)


def log_softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def layer_norm(x, gain, bias, eps: float = 1e-9) -> Tensor:
    """Normalise over the last axis, then apply learnable gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs features {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))

    def bwd(g):
        gxhat = g * gain.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result("layer_norm", xhat * gain.data + bias.data, (x, gain, bias), bwd)


def dropout(x, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout.  ``p == 0`` returns ``x`` unchanged."""
    x = as_tensor(x)
    if p == 0.0:
        return x
    if not 0.0 < p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis)

    def bwd(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result("sum", out, (x,), bwd)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis), 1.0 / n)


def cross_entropy_with_logits(logits, target) -> Tensor:
    """Sum over all rows of categorical cross-entropy between softmax(logits)
    and the (soft or one-hot) ``target`` distribution.  Scalar output."""
    logits, target = as_tensor(logits), as_tensor(target)
    if logits.shape != target.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs target {target.shape}")
    logp = log_softmax_np(logits.data)
    loss = -(target.data * logp).sum()

    def bwd(g):
        p = np.exp(logp)
        row_mass = target.data.sum(axis=-1, keepdims=True)
        return g * (p * row_mass - target.data), g * (-logp)

    return make_result("cross_entropy", np.asarray(loss), (logits, target), bwd)


def squared_error(pred, target) -> Tensor:
    """Sum of squared differences.  Scalar output."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"squared_error: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data

    def bwd(g):
        return 2.0 * g * diff, -2.0 * g * diff

    return make_result("squared_error", np.asarray((diff * diff).sum()), (pred, target), bwd)


def row_norm(x) -> Tensor:
    """Euclidean norm over the last axis."""
    x = as_tensor(x)
    return sqrt(sum(mul(x, x), axis=-1))
