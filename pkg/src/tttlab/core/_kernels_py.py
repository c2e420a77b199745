"""Pure-NumPy im2col / col2im with the same contract as the compiled kernels."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, pad, oh, ow):
    n, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # (n, h', w', c, k, k)
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * oh * ow, k * k * c)


def col2im(cols, n, h, w, c, k, stride, pad, oh, ow):
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    blocks = cols.reshape(n, oh, ow, k, k, c)
    hi = (oh - 1) * stride + 1
    wi = (ow - 1) * stride + 1
    for ki in range(k):
        for kj in range(k):
            out[:, ki : ki + hi : stride, kj : kj + wi : stride] += blocks[:, :, :, ki, kj]
    if pad:
        out = out[:, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(out)


def group_norm_forward(x, groups, gamma, beta, eps):
    n, hw, c = x.shape
    xg = x.reshape(n, hw, groups, c // groups)
    m = hw * (c // groups)
    mean = xg.sum(axis=1, dtype=np.float64).sum(axis=-1) / m  # (n, groups)
    xc = xg - mean[:, None, :, None].astype(x.dtype)
    var = np.square(xc).sum(axis=1, dtype=np.float64).sum(axis=-1) / m
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv[:, None, :, None].astype(x.dtype)).reshape(n, hw, c)
    return xhat * gamma + beta, xhat, inv


def group_norm_backward(gout, xhat, inv, gamma, need_dx):
    n, hw, c = gout.shape
    groups = inv.shape[1]
    dgamma = (gout * xhat).sum(axis=(0, 1))
    dbeta = gout.sum(axis=(0, 1))
    if not need_dx:
        return None, dgamma, dbeta
    m = hw * (c // groups)
    dxhat = (gout * gamma).reshape(n, hw, groups, c // groups)
    xh = xhat.reshape(n, hw, groups, c // groups)
    s1 = dxhat.sum(axis=1).sum(axis=-1)[:, None, :, None]
    s2 = (dxhat * xh).sum(axis=1).sum(axis=-1)[:, None, :, None]
    scale = inv[:, None, :, None].astype(gout.dtype)
    dx = (dxhat - s1 / m - xh * (s2 / m)) * scale
    return dx.reshape(n, hw, c), dgamma, dbeta
