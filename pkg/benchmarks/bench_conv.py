"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_conv.py [--reps N]

Shapes mirror the network's hot convolutions.  Besides timing, the two
backends are checked for agreement on every case.
"""

import argparse
import time

import numpy as np

from ahmf.kernels import available_backends, get_backend

# (label, N, Cin, Cout, H, W, k): the layers that dominate a training step
CASES = [
    ("extract 64ch 64x64", 1, 64, 64, 64, 64, 3),
    ("gru gates 128->64", 1, 128, 64, 64, 64, 3),
    ("squeeze 128->64", 1, 128, 64, 64, 64, 3),
    ("upsample 64->256", 1, 64, 256, 64, 64, 3),
    ("extract 16ch 16x16", 4, 16, 16, 16, 16, 3),
    ("reduce 1x1 256->64", 1, 256, 64, 64, 64, 1),
]


def time_call(fn, reps):
    best = float("inf")
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_case(backend, label, n, ci, co, h, w, k, reps):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (n, ci, h, w)).astype(np.float32)
    wt = rng.uniform(-1, 1, (co, ci, k, k)).astype(np.float32)
    b = np.zeros(co, dtype=np.float32)
    pad = k // 2
    y = backend.conv2d_forward(x, wt, b, 1, pad)
    g = rng.uniform(-1, 1, y.shape).astype(np.float32)
    fwd = time_call(lambda: backend.conv2d_forward(x, wt, b, 1, pad), reps)
    bwd_x = time_call(
        lambda: backend.conv2d_grad_input(g, wt, 1, pad, (h, w)), reps
    )
    bwd_w = time_call(
        lambda: backend.conv2d_grad_weight(g, x, 1, pad, (k, k)), reps
    )
    flops = 2.0 * n * co * h * w * ci * k * k
    return y, fwd, bwd_x, bwd_w, flops


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--reps", type=int, default=7)
    args = parser.parse_args()

    names = available_backends()
    backends = {name: get_backend(name) for name in names}
    print(f"backends: {', '.join(names)}\n")
    header = f"{'case':22s} {'path':6s}" + "".join(f"{n:>12s}" for n in names)
    print(header + f"{'speedup':>10s}" if len(names) == 2 else header)

    for case in CASES:
        label = case[0]
        results = {}
        outputs = {}
        for name, backend in backends.items():
            y, fwd, bx, bw, flops = bench_case(backend, *case, reps=args.reps)
            results[name] = {"fwd": fwd, "grad_x": bx, "grad_w": bw}
            outputs[name] = y
        if len(names) == 2:
            a, b = (outputs[n] for n in names)
            scale = max(1.0, float(np.abs(a).max()))
            err = float(np.abs(a - b).max()) / scale
            assert err < 1e-5, f"{label}: backends disagree by {err} (relative)"
        for path in ("fwd", "grad_x", "grad_w"):
            cells = "".join(
                f"{results[n][path] * 1e3:10.2f}ms" for n in names
            )
            line = f"{label:22s} {path:6s}{cells}"
            if len(names) == 2:
                first, second = (results[n][path] for n in names)
                line += f"{second / first:9.2f}x"
            print(line)
    print("\nbackends agree to 1e-5 relative on all cases")


if __name__ == "__main__":
    main()
