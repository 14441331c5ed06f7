"""Model configuration, assembly, forward pass, and parameter accounting."""

import math
from dataclasses import dataclass

import numpy as np

from . import resample
from . import tensor as T
from .blocks import (
    DOWN_STAGE_K,
    UP_STAGE_K,
    AddFusion,
    Bhfc,
    ConcatFusion,
    FeatureExtractor,
    GuidanceDown,
    Mmaf,
    ParameterStore,
    Reconstructor,
)
from .tensor import Tensor

FUSION_KINDS = ("mmaf", "add", "concat")
COLLAB_KINDS = ("bhfc", "none", "forward", "backward")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs.

    scale: upscale factor (4, 8 or 16)
    depth: number of extraction/fusion levels (m)
    width: channel count of intermediate layers (n)
    fusion / collab select the ablation wirings; the full model is
    fusion="mmaf", collab="bhfc".
    """

    scale: int = 4
    depth: int = 4
    width: int = 64
    guidance_channels: int = 3
    gru_shared: bool = True
    fusion: str = "mmaf"
    collab: str = "bhfc"

    def __post_init__(self):
        if self.scale not in DOWN_STAGE_K:
            raise ConfigError(
                f"scale must be one of {sorted(DOWN_STAGE_K)}, got {self.scale}"
            )
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.width < 1:
            raise ConfigError(f"width must be >= 1, got {self.width}")
        if self.guidance_channels not in (1, 3):
            raise ConfigError(
                f"guidance_channels must be 1 or 3, got {self.guidance_channels}"
            )
        if self.fusion not in FUSION_KINDS:
            raise ConfigError(f"fusion must be one of {FUSION_KINDS}, got {self.fusion}")
        if self.collab not in COLLAB_KINDS:
            raise ConfigError(f"collab must be one of {COLLAB_KINDS}, got {self.collab}")

    @property
    def stages(self):
        return int(math.log2(self.scale))


class Model:
    """Assembled network; read-only during inference."""

    def __init__(self, cfg, store, dtype):
        self.cfg = cfg
        self.store = store
        self.dtype = dtype
        self._blocks = None  # populated by build()

    def forward(self, lr_depth, guidance):
        """Super-resolve ``lr_depth`` guided by ``guidance``.

        lr_depth: (N,1,H,W) in [0,1]; guidance: (N,C,scale*H,scale*W) in
        [0,1].  Returns (N,1,scale*H,scale*W).
        """
        cfg = self.cfg
        n, c, h, w = lr_depth.shape
        if c != 1:
            raise T.ShapeError(f"lr depth must have one channel, got {c}")
        expected = (n, cfg.guidance_channels, h * cfg.scale, w * cfg.scale)
        if guidance.shape != expected:
            raise T.ShapeError(
                f"guidance shape {guidance.shape} does not match expected {expected} "
                f"(scale {cfg.scale}, lr {h}x{w})"
            )
        down, extract, fusions, collab, recon = self._blocks
        lr_up = Tensor(
            resample.bicubic_resize(lr_depth.data, h * cfg.scale, w * cfg.scale)
        )
        guide_init = down(guidance)
        depth_feats, guide_feats = extract(lr_depth, guide_init)
        fused = [
            fusions[i](depth_feats[i], guide_feats[i]) for i in range(cfg.depth)
        ]
        refined = collab(fused) if collab is not None else fused
        return recon(refined, lr_up)

    __call__ = forward


def build(cfg, seed, dtype=np.float32):
    """Deterministically initialize a model from (cfg, seed)."""
    if not isinstance(cfg, ModelConfig):
        raise ConfigError(f"expected ModelConfig, got {type(cfg).__name__}")
    dtype = np.dtype(dtype).type
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    model = Model(cfg, store, dtype)

    down = GuidanceDown(store, rng, cfg, dtype)
    extract = FeatureExtractor(store, rng, cfg, dtype)
    if cfg.fusion == "mmaf":
        fusions = [Mmaf(store, f"mmaf.{i}", cfg.width, rng, dtype) for i in range(cfg.depth)]
    elif cfg.fusion == "concat":
        fusions = [
            ConcatFusion(store, f"fuse.{i}", cfg.width, rng, dtype)
            for i in range(cfg.depth)
        ]
    else:
        fusions = [AddFusion() for _ in range(cfg.depth)]
    if cfg.collab == "none":
        collab = None
    else:
        collab = Bhfc(
            store,
            rng,
            cfg,
            dtype,
            use_forward=cfg.collab in ("bhfc", "forward"),
            use_backward=cfg.collab in ("bhfc", "backward"),
        )
    recon = Reconstructor(store, rng, cfg, dtype)

    model._blocks = (down, extract, fusions, collab, recon)
    return model


def _conv_params(cin, cout, k):
    return cout * cin * k * k + cout


def count_params(cfg):
    """Closed-form trainable scalar count; must equal store enumeration."""
    m, n = cfg.depth, cfg.width
    conv = _conv_params
    total = 0
    # guidance downsampler: expand conv + per-stage (conv + prelu slope)
    total += conv(cfg.guidance_channels, n, 3)
    total += cfg.stages * (conv(4 * n, n, DOWN_STAGE_K[cfg.scale]) + 1)
    # extractor: depth chain starts from one channel, guidance from n
    total += conv(1, n, 3) + 1 + conv(n, n, 3) + 1
    total += 2 * (m - 1) * (conv(n, n, 3) + 1)
    # fusion
    if cfg.fusion == "mmaf":
        feb = 2 * conv(n, n, 3) + 1
        frb = conv(2 * n, n, 3) + 1 + 2 * conv(n, n, 1)
        total += m * (2 * feb + frb)
    elif cfg.fusion == "concat":
        total += m * conv(2 * n, n, 1)
    # collaboration
    if cfg.collab != "none":
        gru = 3 * conv(2 * n, n, 3)
        directions = 2 if cfg.collab == "bhfc" else 1
        total += directions * (gru if cfg.gru_shared else m * gru)
        total += m * (2 * conv(n, n, 3) + 1)  # residual blocks
    # reconstruction
    total += conv(m * n, n, 1) + 1
    total += cfg.stages * (conv(n, 4 * n, UP_STAGE_K[cfg.scale]) + 1)
    total += conv(n, 1, 3) + 1
    return total


# published full-scale totals used as sanity bands (informational)
REFERENCE_PARAM_COUNTS = {4: 2.54e6, 8: 3.36e6, 16: 5.75e6}
