"""Differentiable primitive kernels.

Every op accepts `Tensor` inputs (python scalars where noted), computes with
numpy, and registers a closure producing input gradients. Shapes follow
numpy broadcasting; gradients are summed back to each input's shape.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, make_result

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return make_result(a.data + b, (a,), lambda g: (g,), "add")
    if not isinstance(a, Tensor):
        return add(b, a)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add",
    )


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -b)
    if not isinstance(a, Tensor):
        return add(mul(b, -1.0), a)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub",
    )


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return make_result(a.data * b, (a,), lambda g: (g * b,), "mul")
    if not isinstance(a, Tensor):
        return mul(b, a)
    ad, bd = a.data, b.data

    def back(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_result(ad * bd, (a, b), back, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes with batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    k, n = bd.shape[-2:]
    # A stack of rows times one weight matrix is a single 2D product.
    flat = bd.ndim == 2 and ad.ndim > 2
    if flat:
        out = (ad.reshape(-1, k) @ bd).reshape(ad.shape[:-1] + (n,))
    else:
        out = ad @ bd

    def back(g):
        ga = gb = None
        if flat:
            g2 = g.reshape(-1, n)
            if a.requires_grad:
                ga = (g2 @ bd.T).reshape(ad.shape)
            if b.requires_grad:
                gb = ad.reshape(-1, k).T @ g2
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_result(out, (a, b), back, "matmul")


# -- reductions and shape manipulation ----------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def take(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing; gradients scatter-add back."""
    shape, dtype = x.shape, x.dtype

    basic = isinstance(index, (slice, int)) or (
        isinstance(index, tuple) and all(isinstance(i, (slice, int)) or i is Ellipsis for i in index))

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(x.data[index]), (x,), back, "take")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return make_result(
        np.concatenate([t.data for t in tensors], axis=axis), tensors,
        lambda g: tuple(np.split(g, bounds, axis=axis)), "concat",
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    return make_result(
        np.stack([t.data for t in tensors], axis=axis), tensors,
        lambda g: tuple(np.moveaxis(g, axis, 0)), "stack",
    )


def split(x: Tensor, widths: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Partition ``axis`` into consecutive pieces of the declared widths."""
    widths = [int(w) for w in widths]
    if any(w < 0 for w in widths) or np.sum(widths) != x.shape[axis]:
        raise DimensionError(f"split widths {widths} do not partition extent {x.shape[axis]}")
    pieces = []
    start = 0
    ax = axis % x.ndim
    for w in widths:
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(start, start + w)
        pieces.append(take(x, tuple(sl)))
        start += w
    return pieces


def flip(x: Tensor, axis: int = -2) -> Tensor:
    """Reverse one axis; by convention the sequence axis sits second to last."""
    return make_result(
        np.flip(x.data, axis=axis).copy(), (x,),
        lambda g: (np.flip(g, axis=axis).copy(),), "flip",
    )


def pad_rows(x: Tensor, n_rows: int, axis: int = 0) -> Tensor:
    """Append ``n_rows`` zero slices along ``axis``."""
    if n_rows == 0:
        return x
    ax = axis % x.ndim
    widths = [(0, 0)] * x.ndim
    widths[ax] = (0, n_rows)
    keep = x.shape[ax]

    def back(g):
        sl = [slice(None)] * g.ndim
        sl[ax] = slice(0, keep)
        return (g[tuple(sl)],)

    return make_result(np.pad(x.data, widths), (x,), back, "pad_rows")


# -- elementwise nonlinearities ------------------------------------------------

def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    y = np.logaddexp(0.0, xd).astype(xd.dtype, copy=False)
    return make_result(y, (x,), lambda g: (g * _sigmoid(xd),), "softplus")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make_result((xd * cdf).astype(xd.dtype, copy=False), (x,), back, "gelu")


# -- normalization and attention kernels --------------------------------------

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if x.shape[-1] == 0:
        raise DimensionError("layer_norm over an empty feature axis")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm affine shape {gain.shape} does not match {x.shape[-1]}")
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gain.data
    d = xd.shape[-1]

    def back(g):
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        gx_hat = g * gd
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True) / d)
        return gx, ggain, gbias

    return make_result(xhat * gd + bias.data, (x, gain, bias), back, "layer_norm")


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False get weight 0.

    Every slice must keep at least one unmasked position.
    """
    xd = x.data
    if mask is None:
        z = xd - xd.max(axis=axis, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.broadcast_to(mask, xd.shape)
        shifted_max = np.where(mask, xd, -np.inf).max(axis=axis, keepdims=True)
        e = np.exp(np.where(mask, xd - shifted_max, 0.0)) * mask
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y.astype(xd.dtype, copy=False), (x,), back, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    z = xd - xd.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), back, "log_softmax")


def depthwise_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 1D cross-correlation with symmetric zero 'same' padding.

    ``x`` is ``[..., L, C]`` and ``kernel`` is ``[K, C]`` with K odd.
    Padding is applied independently to every leading slice, so no value
    crosses between slices.
    """
    K, C = kernel.shape
    if K % 2 == 0:
        raise ConfigError(f"depthwise_conv1d kernel size must be odd, got {K}")
    if x.shape[-1] != C:
        raise DimensionError(f"channel extent {x.shape[-1]} does not match kernel {kernel.shape}")
    L = x.shape[-2]
    if L < 1:
        raise DimensionError("depthwise_conv1d needs L >= 1")
    half = K // 2
    xd, kd = x.data, kernel.data
    pad = [(0, 0)] * xd.ndim
    pad[-2] = (half, half)
    xp = np.pad(xd, pad)
    out = np.zeros_like(xd)
    for j in range(K):
        out += xp[..., j:j + L, :] * kd[j]

    def back(g):
        gx = gk = None
        if x.requires_grad:
            gp = np.pad(g, pad)
            gx = np.zeros_like(xd)
            for j in range(K):
                # out[t] uses x[t + j - half]; invert the shift.
                gx += gp[..., K - 1 - j:K - 1 - j + L, :] * kd[j]
        if kernel.requires_grad:
            lead = tuple(range(g.ndim - 1))
            gk = np.stack([(g * xp[..., j:j + L, :]).sum(axis=lead) for j in range(K)])
        return gx, gk

    return make_result(out, (x, kernel), back, "depthwise_conv1d")
