"""L1 training loop: Adam optimizer, halving schedule, checkpoints, logs."""

import math
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import DegradationSpec, degrade_array, synthetic_depth, synthetic_guidance
from .model import ModelConfig, build
from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    def __init__(self, step, value, log_lines):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.log_lines = log_lines


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    steps_per_epoch: int = 1000
    lr0: float = 2e-4
    halve_every: int = 100  # epochs per learning-rate halving
    batch: int = 32
    patch: int = 256
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 = only the final checkpoint
    loss: str = "l1"

    def __post_init__(self):
        if min(self.epochs, self.steps_per_epoch, self.batch, self.patch) < 1:
            raise ValueError("epochs, steps_per_epoch, batch and patch must be >= 1")
        if self.halve_every < 1:
            raise ValueError("halve_every must be >= 1")
        if self.loss not in ("l1", "l2"):
            raise ValueError(f"loss must be 'l1' or 'l2', got {self.loss!r}")


def lr_at(tcfg, epoch):
    return tcfg.lr0 * 0.5 ** (epoch // tcfg.halve_every)


def l1_loss(pred, gt):
    """Mean absolute difference over all elements (sign(0)=0 subgradient)."""
    if pred.shape != gt.shape:
        raise T.ShapeError(f"loss shapes differ: {pred.shape} vs {gt.shape}")
    return T.mean_all(T.absolute(T.sub(pred, gt)))


def l2_loss(pred, gt):
    if pred.shape != gt.shape:
        raise T.ShapeError(f"loss shapes differ: {pred.shape} vs {gt.shape}")
    diff = T.sub(pred, gt)
    return T.mean_all(T.mul(diff, diff))


LOSSES = {"l1": l1_loss, "l2": l2_loss}


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, store, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.moments = {
            name: (np.zeros_like(p.data), np.zeros_like(p.data))
            for name, p in store.items()
        }

    def load(self, table, step):
        for name, (m, v) in table.items():
            if name not in self.moments:
                raise ValueError(f"unknown parameter in optimizer state: {name}")
            self.moments[name] = (m.copy(), v.copy())
        self.t = int(step)


def adam_step(store, state, lr):
    """Bias-corrected Adam update; requires gradients from a backward pass."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in store.items():
        g = p.grad
        if g is None:
            raise ValueError(
                f"missing gradient for {name!r}; run backward before adam_step"
            )
        m, v = state.moments[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - (lr / c1) * m / (np.sqrt(v / c2) + state.eps)


@dataclass
class TrainResult:
    log_lines: list
    losses: list
    checkpoints: list
    state: AdamState


def train(model, batches, tcfg, ckpt_dir=None, on_step=None):
    """Optimize ``model`` on a batch iterator.

    Logs one line per step: "step<TAB>epoch<TAB>lr<TAB>loss" (loss before
    the update, so step 0 reports the initialization loss).  A checkpoint
    lands in ``ckpt_dir`` every ``checkpoint_every`` epochs and at the
    end; on a non-finite loss training aborts and the last good
    checkpoint is retained.
    """
    loss_fn = LOSSES[tcfg.loss]
    state = AdamState(model.store)
    log_lines = []
    losses = []
    checkpoints = []

    def write_log():
        if ckpt_dir is not None:
            with open(os.path.join(ckpt_dir, "loss.log"), "w", encoding="utf-8") as fh:
                fh.write("".join(line + "\n" for line in log_lines))

    def dump(tag):
        if ckpt_dir is None:
            return
        path = os.path.join(ckpt_dir, f"{tag}.ahmf")
        table = {n: (m.copy(), v.copy()) for n, (m, v) in state.moments.items()}
        save_checkpoint(path, model, (table, state.t))
        checkpoints.append(path)

    if ckpt_dir is not None:
        os.makedirs(ckpt_dir, exist_ok=True)
    step = 0
    try:
        for epoch in range(tcfg.epochs):
            lr = lr_at(tcfg, epoch)
            for _ in range(tcfg.steps_per_epoch):
                guidance, lr_depth, gt = next(batches)
                model.store.zero_grad()
                pred = model.forward(lr_depth, guidance)
                loss = loss_fn(pred, gt)
                value = loss.item()
                log_lines.append(f"{step}\t{epoch}\t{lr:.8g}\t{value:.9e}")
                losses.append(value)
                if not math.isfinite(value):
                    write_log()
                    raise TrainingDiverged(step, value, log_lines)
                T.backward(loss)
                adam_step(model.store, state, lr)
                if on_step is not None:
                    on_step(step, value)
                step += 1
            if tcfg.checkpoint_every and (epoch + 1) % tcfg.checkpoint_every == 0:
                dump(f"epoch_{epoch + 1:04d}")
        dump("final")
    finally:
        write_log()
    return TrainResult(log_lines, losses, checkpoints, state)


# ---------------------------------------------------------------------------
# overfit harness: one fixed synthetic ground-truth patch


def overfit_setup(scale=4, depth=4, width=16, patch=64, seed=0):
    """Model plus a constant single-sample batch stream."""
    cfg = ModelConfig(scale=scale, depth=depth, width=width)
    model = build(cfg, seed=seed)
    gt = synthetic_depth(patch, patch, seed=seed)
    guidance = synthetic_guidance(gt, seed=seed)
    spec = DegradationSpec(kind="bicubic", scale=scale)
    lr = degrade_array(gt, spec)
    sample = (
        Tensor(guidance[None]),
        Tensor(lr[None, None]),
        Tensor(gt[None, None]),
    )

    def repeat():
        while True:
            yield sample

    return model, repeat(), sample


def run_overfit(
    steps=2000,
    scale=4,
    depth=4,
    width=16,
    patch=64,
    seed=0,
    lr0=2e-4,
    stop_below=None,
    loss="l1",
):
    """Train on the fixed patch; returns the per-step loss trace."""
    model, batches, _ = overfit_setup(scale, depth, width, patch, seed)
    trace = []
    tcfg = TrainConfig(
        epochs=1, steps_per_epoch=steps, lr0=lr0, batch=1, patch=patch, seed=seed,
        loss=loss,
    )

    class _Stop(Exception):
        pass

    def on_step(step, value):
        trace.append(value)
        if stop_below is not None and value < stop_below:
            raise _Stop

    try:
        train(model, batches, tcfg, ckpt_dir=None, on_step=on_step)
    except _Stop:
        pass
    return trace, model
