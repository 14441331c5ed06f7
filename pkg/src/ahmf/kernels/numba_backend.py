"""Numba-jitted convolution backend.

Every output element is owned by exactly one parallel task and reduced in
a fixed serial order, so results are bit-stable across runs and thread
counts.  The row accumulator keeps the hot inner loops on contiguous
memory so LLVM can vectorize them.
"""

import numpy as np
from numba import njit, prange

from .common import check_conv_args, grad_input_padded, pad_spatial

NAME = "numba"


@njit(cache=True, parallel=True, fastmath=False)
def _forward(xp, w, b, stride, oh, ow):
    n, ci = xp.shape[0], xp.shape[1]
    co, kh, kw = w.shape[0], w.shape[2], w.shape[3]
    out = np.empty((n, co, oh, ow), dtype=xp.dtype)
    for task in prange(n * co):
        i = task // co
        o = task % co
        acc = np.empty(ow, dtype=xp.dtype)
        for y in range(oh):
            for x in range(ow):
                acc[x] = b[o]
            for c in range(ci):
                for ky in range(kh):
                    xrow = xp[i, c, y * stride + ky]
                    if stride == 1:
                        for kx in range(kw):
                            wv = w[o, c, ky, kx]
                            for x in range(ow):
                                acc[x] += wv * xrow[x + kx]
                    else:
                        for kx in range(kw):
                            wv = w[o, c, ky, kx]
                            for x in range(ow):
                                acc[x] += wv * xrow[x * stride + kx]
            for x in range(ow):
                out[i, o, y, x] = acc[x]
    return out


@njit(cache=True, parallel=True, fastmath=False)
def _grad_input(gp, w, h, ww):
    n = gp.shape[0]
    co, ci, kh, kw = w.shape
    dx = np.empty((n, ci, h, ww), dtype=gp.dtype)
    for task in prange(n * ci):
        i = task // ci
        c = task % ci
        acc = np.empty(ww, dtype=gp.dtype)
        for y in range(h):
            for x in range(ww):
                acc[x] = 0.0
            for o in range(co):
                for ky in range(kh):
                    grow = gp[i, o, y + kh - 1 - ky]
                    for j in range(kw):
                        wv = w[o, c, ky, kw - 1 - j]
                        for x in range(ww):
                            acc[x] += wv * grow[x + j]
            for x in range(ww):
                dx[i, c, y, x] = acc[x]
    return dx


@njit(cache=True, parallel=True, fastmath=False)
def _grad_weight(g, xp, stride, ci, kh, kw):
    n, co, oh, ow = g.shape
    dw = np.empty((co, ci, kh, kw), dtype=g.dtype)
    for o in prange(co):
        # accumulate per output column, reduce once at the end: keeps the
        # hot loop free of a serial floating-point dependency chain
        acc = np.empty(ow, dtype=g.dtype)
        for c in range(ci):
            for ky in range(kh):
                for kx in range(kw):
                    for x in range(ow):
                        acc[x] = 0.0
                    for i in range(n):
                        for y in range(oh):
                            grow = g[i, o, y]
                            xrow = xp[i, c, y * stride + ky]
                            if stride == 1:
                                for x in range(ow):
                                    acc[x] += grow[x] * xrow[x + kx]
                            else:
                                for x in range(ow):
                                    acc[x] += grow[x] * xrow[x * stride + kx]
                    total = acc[0]
                    for x in range(1, ow):
                        total += acc[x]
                    dw[o, c, ky, kx] = total
    return dw


def conv2d_forward(x, w, b, stride, padding):
    oh, ow = check_conv_args(x, w, b, stride, padding)
    xp = np.ascontiguousarray(pad_spatial(x, padding))
    return _forward(xp, np.ascontiguousarray(w), b, stride, oh, ow)


def conv2d_grad_input(g, w, stride, padding, in_hw):
    gp = np.ascontiguousarray(grad_input_padded(g, stride, padding, in_hw, w.shape[2]))
    return _grad_input(gp, np.ascontiguousarray(w), in_hw[0], in_hw[1])


def conv2d_grad_weight(g, x, stride, padding, khw):
    xp = np.ascontiguousarray(pad_spatial(x, padding))
    return _grad_weight(
        np.ascontiguousarray(g), xp, stride, x.shape[1], khw[0], khw[1]
    )
