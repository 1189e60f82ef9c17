"""Compression accounting and distribution dumps.

Effective sizes are expressed in 32-bit-word equivalents: quantized
weights count bits_w each, stored 16-bit extremes count 16 plus a 32-bit
index, and biases, per-channel bounds, activation bounds and smoothing
factors count 32 each.  Effective operation cost scales each
multiply-accumulate by its weight's bit-width over 32 (16/32 for stored
extremes); bias adds are not counted.  Ops default to a 3x224x224 input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ModelGraph


@dataclass(frozen=True)
class LayerCompression:
    name: str
    n_weights: int
    n_bias: int
    n_outliers: int
    n_scale_params: int
    params_fp32: float     # 32-bit words
    params_eff: float
    ops_fp32: float        # multiply-accumulates
    ops_eff: float

    @property
    def params_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.params_eff / self.params_fp32)

    @property
    def ops_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.ops_eff / self.ops_fp32)


@dataclass(frozen=True)
class CompressionReport:
    layers: tuple[LayerCompression, ...]
    bits_w: int
    bits_a: int
    beta: float
    params_fp32: float
    params_eff: float
    ops_fp32: float
    ops_eff: float
    effective_weight_bits: float
    metrics: dict | None = None

    @property
    def params_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.params_eff / self.params_fp32)

    @property
    def ops_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.ops_eff / self.ops_fp32)


def effective_weight_bits(bits_w: int, beta: float) -> float:
    """Average stored bits per weight when a ``beta`` fraction stays 16-bit."""
    return (1.0 - beta) * bits_w + beta * 16.0


def report_compression(model: ModelGraph, bits_w: int, bits_a: int, beta: float,
                       input_hw: tuple[int, int] = (224, 224),
                       metrics: dict | None = None) -> CompressionReport:
    """Per-layer and total effective parameter/operation accounting.

    A full-precision model reports zero reduction.  For quantized models
    the stored-extreme counts come from the actual splits, while
    ``effective_weight_bits`` reports the analytic per-weight figure for
    the requested ``beta``.
    """
    h, w = input_hw
    pixels = float(h * w)
    rows = []
    for i, layer in enumerate(model.layers):
        n_w = int(layer.w.size) if not model.is_quantized else int(
            model.quant[i].mixed.normal.codes.size)
        n_b = int(layer.b.size)
        macs = n_w * pixels
        if not model.is_quantized:
            rows.append(LayerCompression(
                name=f"layer{i}", n_weights=n_w, n_bias=n_b, n_outliers=0,
                n_scale_params=0, params_fp32=float(n_w + n_b),
                params_eff=float(n_w + n_b), ops_fp32=macs, ops_eff=macs))
            continue
        q = model.quant[i]
        n_out = q.mixed.num_outliers
        n_normal = n_w - n_out
        c_out = layer.w.shape[0]
        n_scale = 2 * c_out + 2 + (0 if q.smooth is None else int(q.smooth.size))
        params_eff = (n_normal * bits_w + n_out * 16 + n_out * 32
                      + n_b * 32 + n_scale * 32) / 32.0
        ops_eff = pixels * (n_normal * bits_w + n_out * 16) / 32.0
        rows.append(LayerCompression(
            name=f"layer{i}", n_weights=n_w, n_bias=n_b, n_outliers=n_out,
            n_scale_params=n_scale, params_fp32=float(n_w + n_b),
            params_eff=params_eff, ops_fp32=macs, ops_eff=ops_eff))
    eff_bits = float(bits_w) if not model.is_quantized else effective_weight_bits(bits_w, beta)
    return CompressionReport(
        layers=tuple(rows), bits_w=bits_w, bits_a=bits_a, beta=beta,
        params_fp32=sum(r.params_fp32 for r in rows),
        params_eff=sum(r.params_eff for r in rows),
        ops_fp32=sum(r.ops_fp32 for r in rows),
        ops_eff=sum(r.ops_eff for r in rows),
        effective_weight_bits=eff_bits, metrics=metrics)


def write_report_csv(report: CompressionReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("layer,n_weights,n_bias,n_outliers,n_scale_params,"
                 "params_fp32,params_eff,params_reduction_pct,"
                 "ops_fp32,ops_eff,ops_reduction_pct\n")
        for r in report.layers:
            fh.write(f"{r.name},{r.n_weights},{r.n_bias},{r.n_outliers},"
                     f"{r.n_scale_params},{r.params_fp32:.10g},{r.params_eff:.10g},"
                     f"{r.params_reduction_pct:.4f},{r.ops_fp32:.10g},"
                     f"{r.ops_eff:.10g},{r.ops_reduction_pct:.4f}\n")
        fh.write(f"total,,,,,{report.params_fp32:.10g},{report.params_eff:.10g},"
                 f"{report.params_reduction_pct:.4f},{report.ops_fp32:.10g},"
                 f"{report.ops_eff:.10g},{report.ops_reduction_pct:.4f}\n")


def format_report(report: CompressionReport) -> str:
    lines = [
        f"bits: W{report.bits_w}A{report.bits_a}  beta: {report.beta:g}",
        f"effective bits per weight: {report.effective_weight_bits:.4g}",
        f"params: {report.params_eff:.6g} / {report.params_fp32:.6g} words "
        f"(down {report.params_reduction_pct:.2f}%)",
        f"ops:    {report.ops_eff:.6g} / {report.ops_fp32:.6g} MACs "
        f"(down {report.ops_reduction_pct:.2f}%)",
    ]
    if report.metrics:
        for k in sorted(report.metrics):
            lines.append(f"{k}: {report.metrics[k]:.4f}")
    return "\n".join(lines) + "\n"


def dump_histogram(tensor, bins: int, path) -> None:
    """Equal-width histogram CSV over [min, max]; one bin for constants."""
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    flat = np.asarray(tensor, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValueError("empty tensor")
    lo, hi = float(flat.min()), float(flat.max())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        if lo == hi:
            fh.write(f"{lo:.10g},{hi:.10g},{flat.size}\n")
            return
        counts, edges = np.histogram(flat, bins=bins, range=(lo, hi))
        for i, c in enumerate(counts):
            fh.write(f"{edges[i]:.10g},{edges[i + 1]:.10g},{int(c)}\n")
