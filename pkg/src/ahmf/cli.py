"""Command-line interface: degrade | train | infer | eval | gradcheck | params.

All randomness flows from --seed.  Kernel backend and thread count come
from the AHMF_KERNELS / AHMF_THREADS environment variables (see
ahmf.kernels).
"""

import argparse
import sys

import numpy as np

from . import data as D
from . import evaluate as E
from . import gradcheck as G
from . import tensor as T
from .checkpoint import load_checkpoint
from .data import DegradationSpec
from .model import REFERENCE_PARAM_COUNTS, ModelConfig, build, count_params
from .netpbm import write_image
from .train import TrainConfig, TrainingDiverged, train

ABLATIONS = {
    "full": ("mmaf", "bhfc"),
    "add": ("add", "bhfc"),
    "concat": ("concat", "bhfc"),
    "no-bhfc": ("mmaf", "none"),
    "fwd-only": ("mmaf", "forward"),
    "bwd-only": ("mmaf", "backward"),
}


def _fail(msg):
    print(f"error: {msg}", file=sys.stderr)
    return 1


def cmd_degrade(args):
    spec = DegradationSpec(
        kind=args.kind, scale=args.scale, noise_sigma=args.sigma, rng_seed=args.seed
    )
    depth, maxval = D.load_depth(getattr(args, "in"))
    lr = D.degrade_array(depth, spec)
    D.save_depth(args.out, lr, maxval)
    print(
        f"degraded {getattr(args, 'in')} -> {args.out}: kind={spec.kind} "
        f"scale={spec.scale} sigma={spec.noise_sigma} seed={spec.rng_seed} "
        f"({depth.shape[1]}x{depth.shape[0]} -> {lr.shape[1]}x{lr.shape[0]})"
    )
    return 0


def cmd_train(args):
    fusion, collab = ABLATIONS[args.ablation]
    cfg = ModelConfig(scale=args.scale, depth=args.m, width=args.n,
                      fusion=fusion, collab=collab)
    model = build(cfg, seed=args.seed)
    sources = D.load_sources(args.manifest)
    spec = DegradationSpec(kind=args.kind, scale=args.scale, noise_sigma=args.sigma)
    tcfg = TrainConfig(
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        batch=args.batch,
        patch=args.patch,
        seed=args.seed,
        checkpoint_every=args.ckpt_every,
        loss=args.loss,
    )
    batches = D.sample_patches(
        sources, spec, patch=tcfg.patch, batch=tcfg.batch, seed=tcfg.seed
    )
    try:
        result = train(model, batches, tcfg, ckpt_dir=args.ckpt_dir)
    except TrainingDiverged as exc:
        return _fail(f"training aborted: {exc} (last good checkpoint retained)")
    print(f"trained {len(result.losses)} steps; final loss {result.losses[-1]:.6e}")
    print(f"checkpoints: {', '.join(result.checkpoints) or '(none)'}")
    return 0


def cmd_infer(args):
    model, _ = load_checkpoint(args.ckpt)
    guidance = D.load_guidance(args.guidance)
    lr, _ = D.load_depth(args.lr_depth)
    with T.no_grad():
        pred = model.forward(
            T.Tensor(lr[None, None]), T.Tensor(guidance[None])
        )
    q = E.quantize8(pred.data[0, 0])
    write_image(args.out, q[None].astype(np.uint16), 255)
    print(f"wrote {args.out} ({q.shape[1]}x{q.shape[0]}, scale {model.cfg.scale})")
    return 0


def cmd_eval(args):
    model, _ = load_checkpoint(args.ckpt)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    scales = [int(s) for s in args.scales.split(",") if s.strip()]
    specs = [
        DegradationSpec(kind=k, scale=s, noise_sigma=args.sigma, rng_seed=args.seed)
        for s in scales
        for k in kinds
    ]
    report = E.benchmark(model, args.manifest, specs, out_dir=args.out_dir)
    E.write_report(report, args.report)
    print(E.render_table(report))
    if report.failures:
        for f in report.failures:
            print(f"failed: {f}", file=sys.stderr)
        print(f"partial report written to {args.report}", file=sys.stderr)
        return 1
    print(f"report written to {args.report}")
    return 0


def cmd_gradcheck(args):
    try:
        rows = G.run_suite(ops=args.ops, seeds=args.seeds, base_seed=args.seed)
    except KeyError as exc:
        return _fail(exc.args[0])
    width = max(len(r[0]) for r in rows)
    ok = True
    for name, err, tol, passed in rows:
        ok &= passed
        print(f"{name:<{width}}  {err:.3e}  (tol {tol:.0e})  "
              f"{'pass' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_params(args):
    cfg = ModelConfig(scale=args.scale, depth=args.m, width=args.n)
    count = count_params(cfg)
    line = f"parameters: {count} ({count / 1e6:.2f}M) for scale={args.scale} m={args.m} n={args.n}"
    ref = REFERENCE_PARAM_COUNTS.get(args.scale)
    if ref is not None and (args.m, args.n) == (4, 64):
        line += f"; published reference {ref / 1e6:.2f}M, ratio {count / ref:.2f}"
    print(line)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ahmf", description="Guided depth map super-resolution toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="synthesize a low-resolution depth map")
    p.add_argument("--in", required=True, help="HR depth PGM")
    p.add_argument("--out", required=True, help="LR depth PGM to write")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--kind", choices=D.DEGRADATION_KINDS, default="bicubic")
    p.add_argument("--sigma", type=float, default=5.0, help="noise std in 8-bit units")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("train", help="train a model from a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--m", type=int, default=4, help="extraction/fusion levels")
    p.add_argument("--n", type=int, default=64, help="channel width")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--steps-per-epoch", type=int, default=1000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--patch", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--ckpt-every", type=int, default=0, help="epochs between checkpoints")
    p.add_argument("--loss", choices=("l1", "l2"), default="l1")
    p.add_argument("--ablation", choices=sorted(ABLATIONS), default="full")
    p.add_argument("--kind", choices=D.DEGRADATION_KINDS, default="bicubic")
    p.add_argument("--sigma", type=float, default=5.0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one depth map")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--guidance", required=True, help="HR guidance PPM")
    p.add_argument("--lr-depth", required=True, help="LR depth PGM")
    p.add_argument("--out", required=True, help="8-bit PGM to write")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="benchmark a checkpoint over a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--kinds", default="bicubic", help="comma-separated degradations")
    p.add_argument("--scales", default="4", help="comma-separated scales")
    p.add_argument("--sigma", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True, help="TSV report path")
    p.add_argument("--out-dir", default=None, help="directory for predicted PGMs")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=20, help="seeds per op")
    p.add_argument("--ops", default="all", help="'all', an op name, or 'model'")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("params", help="closed-form parameter count")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--n", type=int, default=64)
    p.set_defaults(fn=cmd_params)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
