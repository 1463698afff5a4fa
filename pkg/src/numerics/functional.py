"""
@file functional.py
@brief Differentiable operations over Tensor
@details Each op computes its forward value with numpy, validates shapes and
finiteness, and registers a backward closure that accumulates exact gradients
into its inputs. All ops are deterministic and pure apart from those gradient
buffers.
"""

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from errors import ContractViolation
from numerics.tensor import Tensor, as_tensor, unbroadcast

# Additive attention bias for masked keys; exp() of it underflows to exactly zero.
MASK_BIAS = -1.0e30
LAYER_NORM_EPS = 1.0e-10
_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(grad, b.shape))

    return Tensor.from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(-grad, b.shape))

    return Tensor.from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(grad * a.data, b.shape))

    return Tensor.from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(grad):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad / b.data, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(-grad * out / b.data, b.shape))

    return Tensor.from_op(out, (a, b), backward, "div")


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(grad):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(np.swapaxes(a.data, -1, -2) @ grad, b.shape))

    return Tensor.from_op(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    @brief y = x·w + b over the last axis of x
    @param x Tensor[..., d_in]
    @param w Tensor[d_in, d_out]
    @param b Tensor[d_out] or None
    """
    x = as_tensor(x)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ContractViolation(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ContractViolation(f"linear: bias shape {b.shape} incompatible with weight shape {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(grad):
        flat_grad = grad.reshape(-1, w.shape[1])
        if x.requires_grad:
            x.accumulate(grad @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.reshape(-1, w.shape[0]).T @ flat_grad)
        if b is not None and b.requires_grad:
            b.accumulate(flat_grad.sum(axis=0))

    return Tensor.from_op(out, parents, backward, "linear")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(grad):
        x.accumulate(grad * out)

    return Tensor.from_op(out, (x,), backward, "exp")


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(x, floor)``; clamped entries receive no gradient."""
    clamped = np.maximum(x.data, floor) if floor > 0.0 else x.data
    out = np.log(clamped)

    def backward(grad):
        live = x.data >= floor if floor > 0.0 else np.ones_like(x.data, dtype=bool)
        x.accumulate(np.where(live, grad / clamped, 0.0))

    return Tensor.from_op(out, (x,), backward, "log")


def sqrt(x: Tensor) -> Tensor:
    """Square root; entries at exactly zero pass no gradient (subgradient 0)."""
    out = np.sqrt(x.data)

    def backward(grad):
        live = out > 0.0
        x.accumulate(np.where(live, grad * 0.5 / np.where(live, out, 1.0), 0.0))

    return Tensor.from_op(out, (x,), backward, "sqrt")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT_HALF))
    out = x.data * cdf

    def backward(grad):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        x.accumulate(grad * (cdf + x.data * pdf))

    return Tensor.from_op(out, (x,), backward, "gelu")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        x.accumulate(np.broadcast_to(grad, x.shape))

    return Tensor.from_op(np.asarray(out, dtype=np.float64), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)

    def backward(grad):
        x.accumulate(grad.reshape(x.shape))

    return Tensor.from_op(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)

    def backward(grad):
        x.accumulate(np.transpose(grad, inverse))

    return Tensor.from_op(out, (x,), backward, "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = np.broadcast_to(x.data, shape).copy()

    def backward(grad):
        x.accumulate(unbroadcast(grad, x.shape))

    return Tensor.from_op(out, (x,), backward, "broadcast_to")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for tensor, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if tensor.requires_grad:
                tensor.accumulate(np.take(grad, np.arange(start, stop), axis=axis))

    return Tensor.from_op(out, tensors, backward, "concat")


def index(x: Tensor, key) -> Tensor:
    """Basic or advanced indexing; gradients scatter back with ``np.add.at``."""
    out = np.array(x.data[key], dtype=np.float64)
    parts = key if isinstance(key, tuple) else (key,)
    basic = all(p is None or p is Ellipsis or isinstance(p, slice) or np.isscalar(p) for p in parts)

    def backward(grad):
        full = np.zeros_like(x.data)
        if basic:
            full[key] += grad
        else:
            np.add.at(full, key, grad)
        x.accumulate(full)

    return Tensor.from_op(out, (x,), backward, "index")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` for an integer id array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractViolation(f"embedding: ids must lie in [0, {table.shape[0]}), got max {ids.max()}")
    out = table.data[ids]

    def backward(grad):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), grad.reshape(-1, table.shape[1]))
        table.accumulate(full)

    return Tensor.from_op(out, (table,), backward, "embedding")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    if x.shape[axis] < 1:
        raise ContractViolation(f"softmax: axis {axis} of shape {x.shape} is empty")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    weights = np.exp(shifted)
    out = weights / np.sum(weights, axis=axis, keepdims=True)

    def backward(grad):
        inner = np.sum(grad * out, axis=axis, keepdims=True)
        x.accumulate(out * (grad - inner))

    return Tensor.from_op(out, (x,), backward, "softmax")


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    peak = np.max(x.data, axis=axis, keepdims=True)
    weights = np.exp(x.data - peak)
    total = np.sum(weights, axis=axis, keepdims=True)
    out = peak + np.log(total)
    probabilities = weights / total

    def backward(grad):
        if not keepdims:
            grad = np.expand_dims(grad, axis)
        x.accumulate(grad * probabilities)

    result = out if keepdims else np.squeeze(out, axis=axis)
    return Tensor.from_op(np.asarray(result, dtype=np.float64), (x,), backward, "logsumexp")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ContractViolation(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match input {x.shape}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * inv_std
    out = normalized * gain.data + bias.data

    def backward(grad):
        lead = tuple(range(grad.ndim - 1))
        if gain.requires_grad:
            gain.accumulate(np.sum(grad * normalized, axis=lead))
        if bias.requires_grad:
            bias.accumulate(np.sum(grad, axis=lead))
        if x.requires_grad:
            g_norm = grad * gain.data
            x.accumulate(inv_std * (g_norm - g_norm.mean(axis=-1, keepdims=True)
                                    - normalized * (g_norm * normalized).mean(axis=-1, keepdims=True)))

    return Tensor.from_op(out, (x, gain, bias), backward, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / (||x|| + eps) along ``axis``; the eps keeps zero vectors finite."""
    norm = sqrt(sum(mul(x, x), axis=axis, keepdims=True))
    return div(x, add(norm, eps))


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """
    Mean over the token axis (-2) counting only rows where ``mask`` is True.

    :param x: Tensor[B, S, d]
    :param mask: bool array [B, S]
    """
    weights = np.asarray(mask, dtype=np.float64)
    counts = np.maximum(weights.sum(axis=-1, keepdims=True), 1.0)
    pooled = sum(mul(x, weights[..., None]), axis=-2)
    return div(pooled, counts)
