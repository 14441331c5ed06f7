"""Shape arithmetic shared by both kernel backends."""

import numpy as np


def out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def check_conv_args(x, w, b, stride, padding):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects 4-d input and weight arrays")
    co, ci, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd size, got {kh}x{kw}")
    if x.shape[1] != ci:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[1]}, weight expects {ci}"
        )
    if b.shape != (co,):
        raise ValueError(f"conv2d bias must have shape ({co},), got {b.shape}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d padding must be non-negative, got {padding}")
    oh = out_size(x.shape[2], kh, stride, padding)
    ow = out_size(x.shape[3], kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ValueError(
            f"conv2d output would be empty for input {x.shape[2]}x{x.shape[3]}, "
            f"kernel {kh}, stride {stride}, padding {padding}"
        )
    return oh, ow


def pad_spatial(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def dilate_rows_cols(g, stride, h, w):
    """Insert stride-1 zeros between entries and trim to the given size."""
    if stride == 1:
        return g
    n, c, gh, gw = g.shape
    out = np.zeros((n, c, h, w), dtype=g.dtype)
    out[:, :, : (gh - 1) * stride + 1 : stride, : (gw - 1) * stride + 1 : stride] = g
    return out


def grad_input_padded(g, stride, padding, in_hw, k):
    """Dilated-and-padded upstream gradient for the input-gradient gather.

    Returns an array gp such that
    dx[n, ci, y, x] = sum_{co,ky,kx} gp[n, co, y + k-1-ky, x + k-1-kx] * w[co, ci, ky, kx].
    """
    h, w = in_hw
    oh, ow = g.shape[2], g.shape[3]
    dil_h = (oh - 1) * stride + 1
    dil_w = (ow - 1) * stride + 1
    gd = dilate_rows_cols(g, stride, dil_h, dil_w)
    left = k - 1 - padding
    right_h = h + k - 1 - left - dil_h
    right_w = w + k - 1 - left - dil_w
    if left < 0 or right_h < 0 or right_w < 0:
        raise ValueError("conv2d padding exceeds kernel extent")
    return np.pad(gd, ((0, 0), (0, 0), (left, right_h), (left, right_w)))
