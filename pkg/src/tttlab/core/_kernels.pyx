# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im for NHWC convolutions with implicit zero padding.

Rows of the column matrix are output pixels ``(n, i, j)``; columns are
``(ki, kj, c)``. Along ``kj`` and ``c`` the source is contiguous in NHWC, so
each row is assembled from ``k`` runs of at most ``k * C`` values.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt
from libc.string cimport memcpy, memset

cnp.import_array()


def im2col(floating[:, :, :, ::1] x, int k, int stride, int pad, int oh, int ow):
    cdef Py_ssize_t nb = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t width = k * k * c
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((nb * oh * ow, width), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef floating* dst
    cdef Py_ssize_t n, i, j, ki, kj, r, col0, col1, row
    with nogil:
        for n in range(nb):
            for i in range(oh):
                for j in range(ow):
                    row = (n * oh + i) * ow + j
                    col0 = j * stride - pad
                    col1 = col0 + k
                    for ki in range(k):
                        r = i * stride - pad + ki
                        dst = &out[row, ki * k * c]
                        if r < 0 or r >= h:
                            memset(dst, 0, k * c * sizeof(floating))
                            continue
                        if col0 >= 0 and col1 <= w:
                            memcpy(dst, &x[n, r, col0, 0], k * c * sizeof(floating))
                        else:
                            for kj in range(k):
                                if col0 + kj < 0 or col0 + kj >= w:
                                    memset(dst + kj * c, 0, c * sizeof(floating))
                                else:
                                    memcpy(dst + kj * c, &x[n, r, col0 + kj, 0], c * sizeof(floating))
    return out_arr


def col2im(floating[:, ::1] cols, int nb, int h, int w, int c,
           int k, int stride, int pad, int oh, int ow):
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((nb, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef floating* src
    cdef floating* dst
    cdef Py_ssize_t n, i, j, ki, kj, r, cc, col, q, row
    with nogil:
        for n in range(nb):
            for i in range(oh):
                for j in range(ow):
                    row = (n * oh + i) * ow + j
                    for ki in range(k):
                        r = i * stride - pad + ki
                        if r < 0 or r >= h:
                            continue
                        for kj in range(k):
                            col = j * stride - pad + kj
                            if col < 0 or col >= w:
                                continue
                            src = &cols[row, (ki * k + kj) * c]
                            dst = &out[n, r, col, 0]
                            for q in range(c):
                                dst[q] += src[q]
    return out_arr


def group_norm_forward(floating[:, :, ::1] x, int groups, floating[::1] gamma,
                       floating[::1] beta, double eps):
    """GroupNorm over ``x`` viewed as ``[N, HW, C]``.

    Returns ``(out, xhat, inv_std)`` with ``inv_std`` of shape ``[N, groups]``.
    Sums are accumulated per channel first (contiguous, vectorisable) and
    then folded into groups.
    """
    cdef Py_ssize_t nb = x.shape[0], hw = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t cg = c // groups
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((nb, hw, c), dtype=dtype)
    xhat_arr = np.empty((nb, hw, c), dtype=dtype)
    inv_arr = np.empty((nb, groups), dtype=np.float64)
    cdef floating[:, :, ::1] out = out_arr
    cdef floating[:, :, ::1] xhat = xhat_arr
    cdef double[:, ::1] inv = inv_arr
    cdef double[::1] s = np.empty(c, dtype=np.float64)
    cdef double[::1] mu = np.empty(c, dtype=np.float64)
    cdef double[::1] istd = np.empty(c, dtype=np.float64)
    cdef double[::1] scale = np.empty(c, dtype=np.float64)
    cdef Py_ssize_t n, p, q, g, ch
    cdef double acc, v, m = hw * cg
    cdef floating* row
    cdef floating* orow
    cdef floating* hrow
    with nogil:
        for n in range(nb):
            for ch in range(c):
                s[ch] = 0.0
            for p in range(hw):
                row = &x[n, p, 0]
                for ch in range(c):
                    s[ch] += row[ch]
            for g in range(groups):
                acc = 0.0
                for q in range(cg):
                    acc = acc + s[g * cg + q]
                for q in range(cg):
                    mu[g * cg + q] = acc / m
            for ch in range(c):
                s[ch] = 0.0
            for p in range(hw):
                row = &x[n, p, 0]
                for ch in range(c):
                    v = row[ch] - mu[ch]
                    s[ch] += v * v
            for g in range(groups):
                acc = 0.0
                for q in range(cg):
                    acc = acc + s[g * cg + q]
                acc = 1.0 / sqrt(acc / m + eps)
                inv[n, g] = acc
                for q in range(cg):
                    istd[g * cg + q] = acc
                    scale[g * cg + q] = acc * gamma[g * cg + q]
            for p in range(hw):
                row = &x[n, p, 0]
                hrow = &xhat[n, p, 0]
                orow = &out[n, p, 0]
                for ch in range(c):
                    v = row[ch] - mu[ch]
                    hrow[ch] = <floating>(v * istd[ch])
                    orow[ch] = <floating>(v * scale[ch] + beta[ch])
    return out_arr, xhat_arr, inv_arr


def group_norm_backward(floating[:, :, ::1] gout, floating[:, :, ::1] xhat,
                        double[:, ::1] inv, floating[::1] gamma, bint need_dx):
    """Returns ``(dx or None, dgamma, dbeta)`` for :func:`group_norm_forward`."""
    cdef Py_ssize_t nb = gout.shape[0], hw = gout.shape[1], c = gout.shape[2]
    cdef Py_ssize_t groups = inv.shape[1]
    cdef Py_ssize_t cg = c // groups
    dtype = np.float32 if floating is float else np.float64
    dgamma_arr = np.zeros(c, dtype=np.float64)
    dbeta_arr = np.zeros(c, dtype=np.float64)
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double[::1] sg = np.empty(c, dtype=np.float64)
    cdef double[::1] sgx = np.empty(c, dtype=np.float64)
    cdef double[::1] ca = np.empty(c, dtype=np.float64)
    cdef double[::1] cb = np.empty(c, dtype=np.float64)
    cdef double[::1] cc = np.empty(c, dtype=np.float64)
    dx_arr = np.empty((nb, hw, c), dtype=dtype) if need_dx else None
    cdef floating[:, :, ::1] dx
    if need_dx:
        dx = dx_arr
    cdef Py_ssize_t n, p, q, g, ch
    cdef double s1, s2, istd, m = hw * cg
    cdef floating* grow
    cdef floating* hrow
    cdef floating* drow
    with nogil:
        for n in range(nb):
            for ch in range(c):
                sg[ch] = 0.0
                sgx[ch] = 0.0
            for p in range(hw):
                grow = &gout[n, p, 0]
                hrow = &xhat[n, p, 0]
                for ch in range(c):
                    sg[ch] += grow[ch]
                    sgx[ch] += grow[ch] * hrow[ch]
            for ch in range(c):
                dbeta[ch] += sg[ch]
                dgamma[ch] += sgx[ch]
            if not need_dx:
                continue
            for g in range(groups):
                s1 = 0.0
                s2 = 0.0
                for q in range(cg):
                    s1 = s1 + gamma[g * cg + q] * sg[g * cg + q]
                    s2 = s2 + gamma[g * cg + q] * sgx[g * cg + q]
                istd = inv[n, g]
                for q in range(cg):
                    ca[g * cg + q] = gamma[g * cg + q] * istd
                    cb[g * cg + q] = s1 / m * istd
                    cc[g * cg + q] = s2 / m * istd
            for p in range(hw):
                grow = &gout[n, p, 0]
                hrow = &xhat[n, p, 0]
                drow = &dx[n, p, 0]
                for ch in range(c):
                    drow[ch] = <floating>(grow[ch] * ca[ch] - cb[ch] - hrow[ch] * cc[ch])
    return dx_arr, dgamma_arr.astype(dtype), dbeta_arr.astype(dtype)
