"""MAE/RMSE evaluation under the 8-bit quantization protocol."""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import (
    DataError,
    SourceImage,
    degrade_array,
    load_depth,
    load_guidance,
    read_manifest,
)
from .netpbm import write_image
from .tensor import Tensor

# Informational full-scale reference for 4x on the standard benchmark;
# recorded in report headers, never asserted at desk scale.
REFERENCE_MAE_4X = 0.157


def quantize8(x):
    """round(clip(x,0,1)*255) with round-half-up; returns uint8."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.floor(np.clip(arr, 0.0, 1.0).astype(np.float64) * 255.0 + 0.5).astype(
        np.uint8
    )


def dequantize8(q):
    return q.astype(np.float32) / 255.0


def _as_metric_pair(pred8, gt8):
    a = np.asarray(pred8, dtype=np.float64)
    b = np.asarray(gt8, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"metric shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mae(pred8, gt8):
    """Mean absolute error in 8-bit units."""
    a, b = _as_metric_pair(pred8, gt8)
    return float(np.abs(a - b).mean())


def rmse(pred8, gt8):
    """Root mean squared error in 8-bit units."""
    a, b = _as_metric_pair(pred8, gt8)
    return float(np.sqrt(((a - b) ** 2).mean()))


@dataclass
class EvalRow:
    image: str
    scale: int
    degradation: str
    mae: float
    rmse: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    averages: dict = field(default_factory=dict)  # scale -> (mae, rmse)
    seconds_per_image: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def finalize(self):
        self.rows.sort(key=lambda r: (r.image, r.scale, r.degradation))
        by_scale = {}
        for r in self.rows:
            by_scale.setdefault(r.scale, []).append(r)
        self.averages = {
            s: (
                float(np.mean([r.mae for r in rows])),
                float(np.mean([r.rmse for r in rows])),
            )
            for s, rows in sorted(by_scale.items())
        }
        return self


def benchmark(model, manifest_path, specs, out_dir=None):
    """Evaluate a model over every (manifest image, degradation spec).

    Predicted depth maps are written as 8-bit PGMs under ``out_dir``.
    Missing or unreadable inputs are recorded as failures and evaluation
    continues.  Both prediction and ground truth are quantized to 8 bits
    before computing metrics.
    """
    report = EvalReport()
    for spec in specs:
        if spec.scale != model.cfg.scale:
            raise ValueError(
                f"checkpoint was built for scale {model.cfg.scale}, "
                f"spec asks for {spec.scale}"
            )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    sources = []
    for gpath, dpath, maxval in read_manifest(manifest_path):
        try:
            guidance = load_guidance(gpath)
            depth, file_max = load_depth(dpath)
            if guidance.shape[1:] != depth.shape:
                raise DataError(
                    f"{gpath} and {dpath} disagree on resolution: "
                    f"{guidance.shape[1:]} vs {depth.shape}"
                )
        except (OSError, ValueError) as exc:
            report.failures.append(str(exc))
            continue
        name = os.path.splitext(os.path.basename(dpath))[0]
        sources.append(SourceImage(name, guidance, depth, maxval or file_max))
    for src in sources:
        for spec in specs:
            label = f"{src.name}@{spec.kind}x{spec.scale}"
            try:
                lr = degrade_array(src.depth, spec)
                started = time.perf_counter()
                with T.no_grad():
                    pred = model.forward(
                        Tensor(lr[None, None]), Tensor(src.guidance[None])
                    )
                report.seconds_per_image[label] = time.perf_counter() - started
                pred8 = quantize8(pred.data[0, 0])
                gt8 = quantize8(src.depth)
                report.rows.append(
                    EvalRow(src.name, spec.scale, spec.kind,
                            mae(pred8, gt8), rmse(pred8, gt8))
                )
                if out_dir:
                    write_image(
                        os.path.join(out_dir, f"{src.name}_{spec.kind}_x{spec.scale}.pgm"),
                        pred8[None].astype(np.uint16),
                        255,
                    )
            except (OSError, ValueError) as exc:
                report.failures.append(f"{label}: {exc}")
    return report.finalize()


def report_tsv(report):
    """Deterministic TSV serialization (no timing data)."""
    lines = [
        f"# reference-4x-average-mae: {REFERENCE_MAE_4X} "
        "(published full-scale result; informational, not asserted)",
        "image\tscale\tdegradation\tmae\trmse",
    ]
    for r in report.rows:
        lines.append(f"{r.image}\t{r.scale}\t{r.degradation}\t{r.mae:.6f}\t{r.rmse:.6f}")
    for scale, (m, r) in report.averages.items():
        lines.append(f"average\t{scale}\t-\t{m:.6f}\t{r:.6f}")
    return "".join(line + "\n" for line in lines)


def render_table(report):
    """Aligned human-readable table of the same rows."""
    header = ("image", "scale", "degradation", "mae", "rmse")
    body = [
        (r.image, str(r.scale), r.degradation, f"{r.mae:.4f}", f"{r.rmse:.4f}")
        for r in report.rows
    ]
    body += [
        ("average", str(s), "-", f"{m:.4f}", f"{r:.4f}")
        for s, (m, r) in report.averages.items()
    ]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(5)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*row) for row in body]
    return "\n".join(lines)


def write_report(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_tsv(report))
