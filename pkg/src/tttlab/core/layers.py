"""Differentiable layers used by the Y-shaped network.

All image tensors are NCHW. Convolution is cross-correlation (no kernel
flip), the usual deep-learning convention.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import ConfigError, InputError, ShapeError
from . import kernels
from .tensor import Tensor


_LAYOUTS = ("NCHW", "NHWC")


def _check_layout(layout):
    if layout not in _LAYOUTS:
        raise ConfigError(f"layout must be one of {_LAYOUTS}, got {layout!r}")


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0,
           bias: Optional[Tensor] = None, layout: str = "NCHW") -> Tensor:
    """2-D cross-correlation with zero padding.

    With the default layout ``x`` is ``[N, C, H, W]`` and the result is
    ``[N, F, H', W']`` where ``H' = (H + 2*padding - k) // stride + 1``.
    ``weight`` is always ``[F, C, k, k]``. ``layout="NHWC"`` takes and returns
    channels-last tensors, which is the layout the kernels work in.
    """
    _check_layout(layout)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and weight, got {x.shape} and {weight.shape}")
    if layout == "NCHW":
        n, c, h, w = x.shape
    else:
        n, h, w, c = x.shape
    f, wc, k, k2 = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {wc}")
    if k != k2:
        raise ShapeError(f"conv2d: only square kernels are supported, got {k}x{k2}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} / padding={padding}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {(h + 2 * padding, w + 2 * padding)}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({f},)")
    if layout == "NCHW":
        out = _conv_nhwc(x.transpose(0, 2, 3, 1), weight, stride, padding, bias)
        return out.transpose(0, 3, 1, 2)
    return _conv_nhwc(x, weight, stride, padding, bias)


def _conv_nhwc(x, weight, stride, padding, bias):
    n, h, w, c = x.shape
    f, _, k, _ = weight.shape
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    xd = np.ascontiguousarray(x.data, dtype=weight.dtype)
    cols = kernels.im2col(xd, k, stride, padding, oh, ow)
    # rows ordered (ki, kj, c) to match the column layout
    wmat = weight.data.transpose(2, 3, 1, 0).reshape(k * k * c, f)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(n, oh, ow, f)

    def back(g):
        g2 = np.ascontiguousarray(g).reshape(-1, f)
        dw = None
        if weight.requires_grad:
            dw = (cols.T @ g2).reshape(k, k, c, f).transpose(3, 2, 0, 1)
        dx = None
        if x.requires_grad:
            dx = kernels.col2im(g2 @ wmat.T, n, h, w, c, k, stride, padding, oh, ow)
        if bias is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(out, parents, back)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               layout: str = "NCHW") -> Tensor:
    """Group normalization with a per-channel affine transform.

    Statistics are computed per sample over each group of ``C // groups``
    channels and all spatial positions, so the result does not depend on the
    batch size.
    """
    _check_layout(layout)
    if x.ndim != 4:
        raise ShapeError(f"group_norm: expected a 4-d input, got {x.shape}")
    c = x.shape[1] if layout == "NCHW" else x.shape[3]
    if groups < 1 or c % groups:
        raise ConfigError(f"group_norm: {c} channels not divisible into {groups} groups")
    if eps <= 0:
        raise ConfigError("group_norm: eps must be positive")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: gamma/beta must have shape ({c},)")
    if layout == "NCHW":
        return _group_norm_nhwc(x.transpose(0, 2, 3, 1), groups, gamma, beta, eps).transpose(0, 3, 1, 2)
    return _group_norm_nhwc(x, groups, gamma, beta, eps)


def _group_norm_nhwc(x, groups, gamma, beta, eps):
    n, h, w, c = x.shape
    dtype = x.dtype
    xd = np.ascontiguousarray(x.data).reshape(n, h * w, c)
    g_arr = np.ascontiguousarray(gamma.data, dtype=dtype)
    out, xhat, inv_std = kernels.group_norm_forward(xd, groups, g_arr, np.ascontiguousarray(beta.data, dtype=dtype), eps)

    def back(g):
        gd = np.ascontiguousarray(g, dtype=dtype).reshape(n, h * w, c)
        dx, dgamma, dbeta = kernels.group_norm_backward(gd, xhat, inv_std, g_arr, x.requires_grad)
        if dx is not None:
            dx = dx.reshape(n, h, w, c)
        return dx, dgamma, dbeta

    return Tensor.from_op(out.reshape(n, h, w, c), (x, gamma, beta), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,))


def avg_pool(x: Tensor, k: int) -> Tensor:
    """Non-overlapping ``k x k`` average pooling (stride ``k``)."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(f"avg_pool: spatial size {(h, w)} not divisible by {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def back(g):
        g6 = np.broadcast_to(g[:, :, :, None, :, None] / (k * k), (n, c, h // k, k, w // k, k))
        return (g6.reshape(n, c, h, w),)

    return Tensor.from_op(out, (x,), back)


def global_avg_pool(x: Tensor, layout: str = "NCHW") -> Tensor:
    """Average over the spatial axes, giving ``[N, C]``."""
    _check_layout(layout)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected a 4-d input, got {x.shape}")
    if layout == "NCHW":
        n, c, h, w = x.shape
        out = x.data.mean(axis=(2, 3))
        return Tensor.from_op(out, (x,), lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape),))
    n, h, w, c = x.shape
    out = x.data.mean(axis=(1, 2))
    return Tensor.from_op(out, (x,), lambda g: (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape),))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape ``[out, in]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        dx = g @ weight.data if x.requires_grad else None
        dw = g.T @ x.data
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, back)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= k):
        raise InputError(f"softmax_cross_entropy: labels must be integers in [0, {k})")
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def back(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), back)
