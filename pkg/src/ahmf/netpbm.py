"""Binary netpbm image I/O: PGM (P5) for depth, PPM (P6) for guidance.

Samples are unsigned, row-major, big-endian when maxval > 255 (two bytes
per sample).  Arrays are channels-first: (1, H, W) for PGM, (3, H, W)
for PPM.
"""

import numpy as np


class NetpbmError(ValueError):
    pass


def _tokens(data, path):
    """Yield header tokens, skipping whitespace and # comments."""
    i = 0
    n = len(data)
    while True:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i] != 0x0A:
                i += 1
            continue
        if i >= n:
            raise NetpbmError(f"{path}: truncated header")
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        yield data[i:j], j
        i = j


def read_image(path):
    """Read a P5/P6 file; returns (samples (C,H,W) uint16, maxval)."""
    with open(path, "rb") as fh:
        data = fh.read()
    toks = _tokens(data, path)
    magic, _ = next(toks)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise NetpbmError(f"{path}: unsupported magic {magic!r}, want P5 or P6")
    try:
        width, _ = next(toks)
        height, _ = next(toks)
        maxval, end = next(toks)
        width, height, maxval = int(width), int(height), int(maxval)
    except (StopIteration, ValueError) as exc:
        raise NetpbmError(f"{path}: malformed header: {exc}") from exc
    if not (0 < maxval < 65536) or width < 1 or height < 1:
        raise NetpbmError(
            f"{path}: invalid header values {width}x{height} maxval={maxval}"
        )
    raster = data[end + 1 :]
    count = width * height * channels
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = count * dtype.itemsize
    if len(raster) < need:
        raise NetpbmError(
            f"{path}: raster truncated, need {need} bytes, have {len(raster)}"
        )
    flat = np.frombuffer(raster[:need], dtype=dtype).astype(np.uint16)
    img = flat.reshape(height, width, channels)
    return np.ascontiguousarray(img.transpose(2, 0, 1)), maxval


def write_image(path, samples, maxval):
    """Write (C,H,W) or (H,W) integer samples as P5 (C=1) or P6 (C=3)."""
    arr = np.asarray(samples)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise NetpbmError(f"expected (1|3,H,W) samples, got shape {arr.shape}")
    if not (0 < maxval < 65536):
        raise NetpbmError(f"maxval out of range: {maxval}")
    if arr.min() < 0 or arr.max() > maxval:
        raise NetpbmError("sample values outside [0, maxval]")
    c, h, w = arr.shape
    magic = b"P5" if c == 1 else b"P6"
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    body = np.ascontiguousarray(arr.transpose(1, 2, 0)).astype(dtype).tobytes()
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(body)
