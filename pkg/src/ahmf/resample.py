"""Separable bicubic resampling (Catmull-Rom, a = -0.5).

Pixel centers follow the align-corners=false convention.  When
downscaling, the kernel support is widened by the scale factor so the
result is anti-aliased.  Rows of the sampling matrix are normalized to
sum to one (partition of unity), so constant images are reproduced
exactly; sample coordinates outside the image clamp to the edge.
"""

from functools import lru_cache

import numpy as np

CUBIC_A = -0.5


def cubic_kernel(t, a=CUBIC_A):
    """Keys cubic kernel; with a=-0.5 it interpolates (Catmull-Rom)."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    tn = t[near]
    tf = t[far]
    out[near] = (a + 2.0) * tn**3 - (a + 3.0) * tn**2 + 1.0
    out[far] = a * tf**3 - 5.0 * a * tf**2 + 8.0 * a * tf - 4.0 * a
    return out


@lru_cache(maxsize=64)
def _axis_matrix(in_size, out_size):
    """Dense (out_size, in_size) float64 sampling matrix for one axis."""
    scale = in_size / out_size
    fscale = max(scale, 1.0)
    radius = 2.0 * fscale
    mat = np.zeros((out_size, in_size), dtype=np.float64)
    for o in range(out_size):
        center = (o + 0.5) * scale - 0.5
        lo = int(np.ceil(center - radius))
        hi = int(np.floor(center + radius))
        taps = np.arange(lo, hi + 1)
        w = cubic_kernel((taps - center) / fscale)
        w /= w.sum()
        np.add.at(mat[o], np.clip(taps, 0, in_size - 1), w)
    return mat


def bicubic_resize(img, out_h, out_w):
    """Resize the trailing two axes of ``img`` to (out_h, out_w).

    Accepts any leading shape; computes in float64 and returns the input
    dtype.  The output is not clipped (cubic lobes may overshoot).
    """
    img = np.asarray(img)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    *lead, h, w = img.shape
    mv = _axis_matrix(h, out_h)
    mh = _axis_matrix(w, out_w)
    flat = img.reshape(-1, h, w).astype(np.float64)
    out = mv @ flat @ mh.T
    return out.reshape(*lead, out_h, out_w).astype(img.dtype)


def bicubic_upsample(img, factor):
    return bicubic_resize(img, img.shape[-2] * factor, img.shape[-1] * factor)
