"""Depth/RGB sample I/O, degradation synthesis, and patch sampling.

All pipeline values are normalized to [0,1]; ``max_value`` keeps the
source bit depth for denormalization.  Degradations are seeded and
reproducible.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import netpbm
from .resample import bicubic_resize
from .tensor import Tensor

DEGRADATION_KINDS = ("bicubic", "direct", "tof_like")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "bicubic"
    scale: int = 4
    noise_sigma: float = 5.0  # 8-bit units; used only by tof_like
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in DEGRADATION_KINDS:
            raise DataError(f"kind must be one of {DEGRADATION_KINDS}, got {self.kind}")
        if self.scale < 1:
            raise DataError(f"scale must be positive, got {self.scale}")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass
class DepthSample:
    """One evaluation/training sample (all tensors normalized)."""

    guidance: Tensor  # (1,C,sH,sW)
    lr_depth: Tensor  # (1,1,H,W)
    gt_depth: Tensor  # (1,1,sH,sW)
    max_value: float = 255.0
    name: str = ""


def degrade_array(gt, spec):
    """Degrade a (..., sH, sW) HR depth array to LR, clipped to [0,1]."""
    gt = np.asarray(gt, dtype=np.float32)
    h, w = gt.shape[-2], gt.shape[-1]
    if h % spec.scale or w % spec.scale:
        raise DataError(
            f"HR size {h}x{w} not divisible by scale {spec.scale}"
        )
    if spec.kind == "direct":
        lr = gt[..., :: spec.scale, :: spec.scale].copy()
    else:
        lr = bicubic_resize(gt, h // spec.scale, w // spec.scale)
        if spec.kind == "tof_like" and spec.noise_sigma > 0:
            rng = np.random.default_rng(spec.rng_seed)
            noise = rng.normal(0.0, spec.noise_sigma / 255.0, size=lr.shape)
            lr = lr + noise.astype(np.float32)
    return np.clip(lr, 0.0, 1.0).astype(np.float32)


def degrade(gt, spec):
    """Tensor wrapper over :func:`degrade_array`."""
    return Tensor(degrade_array(gt.data, spec))


def load_depth(path):
    """Read a PGM depth map; returns ((H,W) float32 in [0,1], max_value)."""
    img, maxval = netpbm.read_image(path)
    if img.shape[0] != 1:
        raise DataError(f"{path}: depth must be single-channel (P5)")
    return img[0].astype(np.float32) / maxval, float(maxval)


def load_guidance(path):
    """Read a PPM/PGM guidance image; returns (C,H,W) float32 in [0,1]."""
    img, maxval = netpbm.read_image(path)
    return img.astype(np.float32) / maxval


def save_depth(path, depth, max_value):
    """Quantize (round half up) a [0,1] depth tensor/array and write PGM."""
    arr = depth.data if isinstance(depth, Tensor) else np.asarray(depth)
    arr = arr.reshape(arr.shape[-2], arr.shape[-1])
    maxval = int(max_value)
    q = np.floor(np.clip(arr, 0.0, 1.0).astype(np.float64) * maxval + 0.5)
    netpbm.write_image(path, q.astype(np.uint16)[None], maxval)


def load_sample(guidance_path, depth_path, spec):
    """Load a registered HR guidance / HR depth pair and derive the LR input."""
    guidance = load_guidance(guidance_path)
    gt, maxval = load_depth(depth_path)
    if guidance.shape[1:] != gt.shape:
        raise DataError(
            f"guidance {guidance_path} is {guidance.shape[2]}x{guidance.shape[1]} "
            f"but depth {depth_path} is {gt.shape[1]}x{gt.shape[0]}"
        )
    lr = degrade_array(gt, spec)
    name = os.path.splitext(os.path.basename(depth_path))[0]
    return DepthSample(
        guidance=Tensor(guidance[None]),
        lr_depth=Tensor(lr[None, None]),
        gt_depth=Tensor(gt[None, None]),
        max_value=maxval,
        name=name,
    )


@dataclass
class SourceImage:
    """Full-resolution material for patch sampling and evaluation."""

    name: str
    guidance: np.ndarray  # (C,H,W) float32 [0,1]
    depth: np.ndarray  # (H,W) float32 [0,1]
    max_value: float = 255.0


class ManifestError(ValueError):
    def __init__(self, path, lines):
        self.lines = lines
        detail = "; ".join(f"line {no}: {msg}" for no, msg in lines)
        super().__init__(f"{path}: {detail}")


def read_manifest(path):
    """Parse 'guidance<TAB>depth<TAB>max_value' lines; relative to the file."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    bad = []
    with open(path, "r", encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                bad.append((no, f"expected 3 tab-separated fields, got {len(parts)}"))
                continue
            try:
                maxval = float(parts[2])
            except ValueError:
                bad.append((no, f"max_value is not a number: {parts[2]!r}"))
                continue
            entries.append(
                (
                    os.path.join(base, parts[0]),
                    os.path.join(base, parts[1]),
                    maxval,
                )
            )
    if bad:
        raise ManifestError(path, bad)
    if not entries:
        raise ManifestError(path, [(0, "manifest lists no samples")])
    return entries


def load_sources(manifest_path):
    sources = []
    for gpath, dpath, maxval in read_manifest(manifest_path):
        guidance = load_guidance(gpath)
        depth, file_max = load_depth(dpath)
        if guidance.shape[1:] != depth.shape:
            raise DataError(
                f"{gpath} and {dpath} disagree on resolution: "
                f"{guidance.shape[1:]} vs {depth.shape}"
            )
        name = os.path.splitext(os.path.basename(dpath))[0]
        sources.append(SourceImage(name, guidance, depth, maxval or file_max))
    return sources


def _reflect_pad_to(arr, h, w):
    ph = max(0, h - arr.shape[-2])
    pw = max(0, w - arr.shape[-1])
    if ph == 0 and pw == 0:
        return arr
    widths = [(0, 0)] * (arr.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(arr, widths, mode="reflect")


def sample_patches(sources, spec, patch=256, batch=32, seed=0):
    """Infinite stream of aligned (guidance, lr, gt) training batches.

    HR crop offsets are constrained to multiples of the scale so the LR
    and HR grids align exactly; LR patches are degraded per crop.  The
    stream is deterministic for a given seed.
    """
    if not sources:
        raise DataError("empty dataset")
    if patch % spec.scale:
        raise DataError(f"patch {patch} must be divisible by scale {spec.scale}")
    prepared = [
        (
            _reflect_pad_to(s.guidance, patch, patch),
            _reflect_pad_to(s.depth, patch, patch),
        )
        for s in sources
    ]
    return _patch_stream(prepared, spec, patch, batch, seed)


def _patch_stream(prepared, spec, patch, batch, seed):
    rng = np.random.default_rng(seed)
    while True:
        guide_b, lr_b, gt_b = [], [], []
        for _ in range(batch):
            guidance, depth = prepared[rng.integers(len(prepared))]
            hr_h, hr_w = depth.shape
            oy = int(rng.integers((hr_h - patch) // spec.scale + 1)) * spec.scale
            ox = int(rng.integers((hr_w - patch) // spec.scale + 1)) * spec.scale
            g = guidance[:, oy : oy + patch, ox : ox + patch]
            d = depth[oy : oy + patch, ox : ox + patch]
            crop_spec = DegradationSpec(
                kind=spec.kind,
                scale=spec.scale,
                noise_sigma=spec.noise_sigma,
                rng_seed=int(rng.integers(2**31)),
            )
            guide_b.append(g)
            gt_b.append(d[None])
            lr_b.append(degrade_array(d, crop_spec)[None])
        yield (
            Tensor(np.stack(guide_b)),
            Tensor(np.stack(lr_b)),
            Tensor(np.stack(gt_b)),
        )


# ---------------------------------------------------------------------------
# synthetic scenes (self-contained material for tests, demos and the
# overfit harness; piecewise-smooth depth with guidance that shares the
# geometry but carries extra texture)


def synthetic_depth(height, width, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    depth = 0.25 + 0.35 * (yy / max(height - 1, 1)) + 0.1 * (xx / max(width - 1, 1))
    for _ in range(6):
        kind = rng.integers(2)
        level = float(rng.uniform(0.05, 0.95))
        cy, cx = rng.uniform(0.1, 0.9, 2)
        ry = float(rng.uniform(0.08, 0.3)) * height
        rx = float(rng.uniform(0.08, 0.3)) * width
        if kind == 0:
            mask = (np.abs(yy - cy * height) < ry) & (np.abs(xx - cx * width) < rx)
        else:
            mask = ((yy - cy * height) / ry) ** 2 + ((xx - cx * width) / rx) ** 2 < 1.0
        depth[mask] = level
    return np.clip(depth, 0.0, 1.0).astype(np.float32)


def synthetic_guidance(depth, seed=0, channels=3):
    """RGB-like guidance: shares depth edges, adds unrelated texture."""
    rng = np.random.default_rng(seed + 1)
    h, w = depth.shape
    gy, gx = np.gradient(depth.astype(np.float64))
    edges = np.clip(np.hypot(gy, gx) * 6.0, 0.0, 1.0)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    chans = []
    for c in range(channels):
        f1, f2 = rng.uniform(2.0, 9.0, 2)
        p1, p2 = rng.uniform(0.0, 2 * np.pi, 2)
        texture = 0.5 + 0.2 * np.sin(2 * np.pi * f1 * xx / w + p1) * np.cos(
            2 * np.pi * f2 * yy / h + p2
        )
        chan = 0.55 * depth + 0.3 * texture + 0.4 * edges
        chans.append(np.clip(chan, 0.0, 1.0))
    return np.stack(chans).astype(np.float32)


def write_synthetic_pair(out_dir, size=256, seed=0, name="scene", channels=3):
    """Write a guidance PPM + depth PGM pair and a manifest; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    depth = synthetic_depth(size, size, seed)
    guidance = synthetic_guidance(depth, seed, channels)
    dpath = os.path.join(out_dir, f"{name}_depth.pgm")
    gpath = os.path.join(out_dir, f"{name}_guide.ppm" if channels == 3 else f"{name}_guide.pgm")
    save_depth(dpath, depth, 255)
    netpbm.write_image(gpath, np.floor(guidance * 255.0 + 0.5).astype(np.uint16), 255)
    mpath = os.path.join(out_dir, "manifest.tsv")
    with open(mpath, "a", encoding="utf-8") as fh:
        fh.write(
            f"{os.path.basename(gpath)}\t{os.path.basename(dpath)}\t255\n"
        )
    return gpath, dpath, mpath
