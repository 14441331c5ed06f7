"""Pure-numpy convolution backend (im2col windows + BLAS tensordot)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .common import check_conv_args, grad_input_padded, pad_spatial

NAME = "numpy"


def conv2d_forward(x, w, b, stride, padding):
    check_conv_args(x, w, b, stride, padding)
    k = w.shape[2]
    xp = pad_spatial(x, padding)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    y = np.tensordot(win, w, axes=((1, 4, 5), (1, 2, 3)))
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    y += b.reshape(1, -1, 1, 1)
    return y


def conv2d_grad_input(g, w, stride, padding, in_hw):
    k = w.shape[2]
    gp = grad_input_padded(g, stride, padding, in_hw, k)
    win = sliding_window_view(gp, (k, k), axis=(2, 3))
    wf = w[:, :, ::-1, ::-1]
    dx = np.tensordot(win, wf, axes=((1, 4, 5), (0, 2, 3)))
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


def conv2d_grad_weight(g, x, stride, padding, khw):
    k = khw[0]
    xp = pad_spatial(x, padding)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    dw = np.tensordot(g, win, axes=((0, 2, 3), (0, 2, 3)))
    return np.ascontiguousarray(dw)
