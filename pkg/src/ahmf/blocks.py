"""Differentiable building blocks of the fusion network.

Each block registers its trainable tensors in a shared
:class:`ParameterStore` under a hierarchical name and is stateless given
(input, parameters).  Channel width ``n`` and level count ``m`` follow
the model configuration.
"""

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

# Kernel sizes of the resampling-stage convolutions per upscale factor.
# The guidance downsampler and the reconstruction upsampler both run
# log2(scale) rearrange-by-2 stages; larger factors use larger kernels.
DOWN_STAGE_K = {4: 1, 8: 3, 16: 5}
UP_STAGE_K = {4: 3, 8: 3, 16: 5}

PRELU_INIT = 0.25

# Sigmoid-gate bias initialization. Gates start mostly open (sigmoid(1.5)
# is roughly 0.82) so the fused signal scale at step 0 is comparable to a
# plain sum and training starts from the permissive wiring; the gates
# then learn what to suppress.  Same idea as forget-gate bias init in
# recurrent networks.
GATE_BIAS_INIT = 1.5


class ParameterStore:
    """Ordered map of unique names to trainable tensors."""

    def __init__(self):
        self._params = {}

    def register(self, name, tensor):
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice")
        if not tensor.requires_grad:
            raise ValueError(f"parameter {name!r} must require gradients")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def total_scalars(self):
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()


def kaiming_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv:
    """Same-size convolution: stride 1, zero padding k//2, odd k."""

    def __init__(self, store, name, cin, cout, k, rng, dtype, zero_init=False,
                 bias_init=0.0):
        if zero_init:
            w = np.zeros((cout, cin, k, k), dtype=dtype)
        else:
            w = kaiming_uniform(rng, (cout, cin, k, k), cin * k * k, dtype)
        self.weight = store.register(f"{name}.weight", Tensor(w, requires_grad=True))
        self.bias = store.register(
            f"{name}.bias",
            Tensor(np.full((1, cout, 1, 1), bias_init, dtype), requires_grad=True),
        )
        self.padding = k // 2

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class PRelu:
    """One trainable channel-shared slope per activation site."""

    def __init__(self, store, name, dtype):
        init = np.full((1, 1, 1, 1), PRELU_INIT, dtype=dtype)
        self.slope = store.register(f"{name}.slope", Tensor(init, requires_grad=True))

    def __call__(self, x):
        return T.prelu(x, self.slope)


class GuidanceDown:
    """Bring HR guidance to LR grid: expand channels, then repeated
    space-to-channel rearrangement with a channel-reducing convolution."""

    def __init__(self, store, rng, cfg, dtype):
        n = cfg.width
        self.expand = Conv(store, "down.expand", cfg.guidance_channels, n, 3, rng, dtype)
        k = DOWN_STAGE_K[cfg.scale]
        self.stages = []
        for s in range(int(math.log2(cfg.scale))):
            conv = Conv(store, f"down.stage{s}.conv", 4 * n, n, k, rng, dtype)
            act = PRelu(store, f"down.stage{s}.act", dtype)
            self.stages.append((conv, act))

    def __call__(self, guidance):
        f = self.expand(guidance)
        for conv, act in self.stages:
            f = act(conv(T.inverse_pixel_shuffle(f, 2)))
        return f


class FeatureExtractor:
    """Two parallel conv+PReLU chains over depth and guidance features."""

    def __init__(self, store, rng, cfg, dtype):
        n = cfg.width
        self.depth_layers = []
        self.guide_layers = []
        for i in range(cfg.depth):
            cin = 1 if i == 0 else n
            self.depth_layers.append(
                (
                    Conv(store, f"extract.depth.{i}.conv", cin, n, 3, rng, dtype),
                    PRelu(store, f"extract.depth.{i}.act", dtype),
                )
            )
            self.guide_layers.append(
                (
                    Conv(store, f"extract.guide.{i}.conv", n, n, 3, rng, dtype),
                    PRelu(store, f"extract.guide.{i}.act", dtype),
                )
            )

    def __call__(self, lr_depth, guide_init):
        f_d, f_y = lr_depth, guide_init
        depth_feats, guide_feats = [], []
        for (dc, da), (gc, ga) in zip(self.depth_layers, self.guide_layers):
            f_d = da(dc(f_d))
            f_y = ga(gc(f_y))
            depth_feats.append(f_d)
            guide_feats.append(f_y)
        return depth_feats, guide_feats


class Feb:
    """Gated feature enhancement: PReLU value path times sigmoid gate."""

    def __init__(self, store, name, width, rng, dtype):
        self.value = Conv(store, f"{name}.value", width, width, 3, rng, dtype)
        self.value_act = PRelu(store, f"{name}.value_act", dtype)
        self.gate = Conv(store, f"{name}.gate", width, width, 3, rng, dtype,
                         bias_init=GATE_BIAS_INIT)

    def __call__(self, f):
        return T.mul(self.value_act(self.value(f)), T.sigmoid(self.gate(f)))


class Frb:
    """Recalibration: joint squeeze to a global (mean + variance)
    embedding, then per-modality sigmoid excitation, averaged fusion."""

    def __init__(self, store, name, width, rng, dtype):
        self.squeeze = Conv(store, f"{name}.squeeze", 2 * width, width, 3, rng, dtype)
        self.squeeze_act = PRelu(store, f"{name}.squeeze_act", dtype)
        self.excite_d = Conv(store, f"{name}.excite_depth", width, width, 1, rng,
                             dtype, bias_init=GATE_BIAS_INIT)
        self.excite_y = Conv(store, f"{name}.excite_guide", width, width, 1, rng,
                             dtype, bias_init=GATE_BIAS_INIT)

    def __call__(self, fd, fy):
        joint = self.squeeze_act(self.squeeze(T.concat_channels([fd, fy])))
        embed = T.add(T.global_avg_pool(joint), T.global_var_pool(joint))
        e_d = T.sigmoid(self.excite_d(embed))
        e_y = T.sigmoid(self.excite_y(embed))
        return T.add(
            T.scale(T.mul(e_d, fd), 0.5),
            T.scale(T.mul(e_y, fy), 0.5),
        )


class Mmaf:
    """Attention fusion of one depth/guidance feature pair."""

    def __init__(self, store, name, width, rng, dtype):
        self.feb_d = Feb(store, f"{name}.feb.depth", width, rng, dtype)
        self.feb_y = Feb(store, f"{name}.feb.guide", width, rng, dtype)
        self.frb = Frb(store, f"{name}.frb", width, rng, dtype)

    def __call__(self, fd, fy):
        return self.frb(self.feb_d(fd), self.feb_y(fy))


class AddFusion:
    """Ablation: plain elementwise sum of the two modalities."""

    def __init__(self):
        pass

    def __call__(self, fd, fy):
        return T.add(fd, fy)


class ConcatFusion:
    """Ablation: channel concatenation followed by a 1x1 projection."""

    def __init__(self, store, name, width, rng, dtype):
        self.proj = Conv(store, f"{name}.proj", 2 * width, width, 1, rng, dtype)

    def __call__(self, fd, fy):
        return self.proj(T.concat_channels([fd, fy]))


class ConvGruCell:
    """Convolutional GRU cell over (hidden, input) feature maps."""

    def __init__(self, store, name, width, rng, dtype):
        self.update = Conv(store, f"{name}.update", 2 * width, width, 3, rng, dtype)
        self.reset = Conv(store, f"{name}.reset", 2 * width, width, 3, rng, dtype)
        self.cand = Conv(store, f"{name}.cand", 2 * width, width, 3, rng, dtype)

    def step(self, hidden, feat):
        both = T.concat_channels([hidden, feat])
        z = T.sigmoid(self.update(both))
        r = T.sigmoid(self.reset(both))
        cand = T.tanh(self.cand(T.concat_channels([T.mul(r, hidden), feat])))
        keep = T.offset(T.scale(z, -1.0), 1.0)  # 1 - z
        return T.add(T.mul(z, cand), T.mul(keep, hidden))


class ResBlock:
    """x + conv(PReLU(conv(x))), both 3x3, no normalization."""

    def __init__(self, store, name, width, rng, dtype):
        self.conv1 = Conv(store, f"{name}.conv1", width, width, 3, rng, dtype)
        self.act = PRelu(store, f"{name}.act", dtype)
        self.conv2 = Conv(store, f"{name}.conv2", width, width, 3, rng, dtype)

    def __call__(self, x):
        return T.add(x, self.conv2(self.act(self.conv1(x))))


def zero_state(like):
    return Tensor(np.zeros(like.shape, dtype=like.data.dtype))


class Bhfc:
    """Bi-directional hierarchical collaboration across the fused levels.

    A forward GRU scans level 1..m, a backward GRU scans m..1, both from
    zero initial state; each level's two hidden states (taken right after
    that level is consumed) are summed and refined by a per-level
    residual block.  ``use_forward`` / ``use_backward`` select the
    single-direction ablations.
    """

    def __init__(self, store, rng, cfg, dtype, use_forward=True, use_backward=True):
        n = cfg.width
        m = cfg.depth

        def make_cells(tag):
            if cfg.gru_shared:
                return ConvGruCell(store, f"bhfc.{tag}", n, rng, dtype)
            return [
                ConvGruCell(store, f"bhfc.{tag}.step{i}", n, rng, dtype)
                for i in range(m)
            ]

        self.fgru = make_cells("fgru") if use_forward else None
        self.bgru = make_cells("bgru") if use_backward else None
        self.res = [ResBlock(store, f"bhfc.res.{i}", n, rng, dtype) for i in range(m)]

    @staticmethod
    def _scan(cells, feats):
        hidden = zero_state(feats[0])
        states = []
        for i, f in enumerate(feats):
            cell = cells[i] if isinstance(cells, list) else cells
            hidden = cell.step(hidden, f)
            states.append(hidden)
        return states

    def __call__(self, feats):
        fwd = self._scan(self.fgru, feats) if self.fgru else None
        bwd = None
        if self.bgru:
            rev = self._scan(self.bgru, feats[::-1])
            bwd = rev[::-1]  # entry i = state right after level i was consumed
        out = []
        for i in range(len(feats)):
            if fwd and bwd:
                h = T.add(fwd[i], bwd[i])
            else:
                h = fwd[i] if fwd else bwd[i]
            out.append(self.res[i](h))
        return out


class Reconstructor:
    """Concatenate refined levels, reduce channels, progressively
    upsample by channel-to-space rearrangement, and predict the residual
    on top of the bicubic upsample."""

    def __init__(self, store, rng, cfg, dtype):
        n = cfg.width
        self.reduce = Conv(store, "recon.reduce", cfg.depth * n, n, 1, rng, dtype)
        self.reduce_act = PRelu(store, "recon.reduce_act", dtype)
        k = UP_STAGE_K[cfg.scale]
        self.stages = []
        for s in range(int(math.log2(cfg.scale))):
            conv = Conv(store, f"recon.up{s}.conv", n, 4 * n, k, rng, dtype)
            act = PRelu(store, f"recon.up{s}.act", dtype)
            self.stages.append((conv, act))
        # zero-initialized so a fresh model reproduces the bicubic upsample
        self.out = Conv(store, "recon.out", n, 1, 3, rng, dtype, zero_init=True)
        self.out_act = PRelu(store, "recon.out_act", dtype)

    def __call__(self, feats, lr_up):
        f = self.reduce_act(self.reduce(T.concat_channels(feats)))
        for conv, act in self.stages:
            f = act(T.pixel_shuffle(conv(f), 2))
        return T.add(self.out_act(self.out(f)), lr_up)
