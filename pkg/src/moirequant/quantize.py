"""Affine fake quantization and its straight-through gradients.

A quantizer site maps real values onto a uniform grid between learned
bounds (l, u):

    scale = (u - l) / (2**bits - 1)
    zero  = clip(round(-l / scale), 0, 2**bits - 1)
    code  = clip(round(v / scale) + zero, 0, 2**bits - 1)
    fq(v) = scale * (code - zero)

Rounding is ties-to-even throughout.  Granularity is per-tensor (scalar
bounds) or per-channel along one axis (bound vectors).  The backward pass
passes gradients straight through inside [l, u] and accumulates bound
gradients from the clipped regions only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import PadMode, conv2d


@dataclass(frozen=True)
class QuantParams:
    """Bounds and derived grid for one quantizer site.

    ``lower``/``upper``/``scale`` are float64 scalars for per-tensor
    granularity or 1-D vectors for per-channel (one slice per index along
    ``axis``).  ``zero_point`` is the integer offset of real zero.
    """

    bits: int
    lower: np.ndarray
    upper: np.ndarray
    scale: np.ndarray
    zero_point: np.ndarray
    axis: int | None = None

    @property
    def per_channel(self) -> bool:
        return self.axis is not None

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1

    def broadcast_shape(self, ndim: int) -> tuple[int, ...]:
        if self.axis is None:
            return ()
        shape = [1] * ndim
        shape[self.axis] = self.lower.shape[0]
        return tuple(shape)


def compute_qparams(lower, upper, bits: int, axis: int | None = None) -> QuantParams:
    """Derive scale and zero-point from bounds.

    Scalars give a per-tensor site; equal-length vectors give one grid per
    channel along ``axis``.
    """
    if not 2 <= int(bits) <= 16:
        raise ValueError(f"bits must be in [2, 16], got {bits}")
    bits = int(bits)
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    if lo.shape != hi.shape:
        raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
    if lo.ndim > 1:
        raise ValueError("bounds must be scalars or 1-D vectors")
    if axis is None and lo.ndim != 0:
        raise ValueError("per-tensor bounds must be scalars")
    if axis is not None and lo.ndim != 1:
        raise ValueError("per-channel bounds must be 1-D")
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        raise ValueError("bounds must be finite")
    if not (hi > lo).all():
        raise ValueError("upper bound must exceed lower bound")
    levels = (1 << bits) - 1
    scale = (hi - lo) / levels
    zero = np.clip(np.rint(-lo / scale), 0, levels).astype(np.int64)
    return QuantParams(bits=bits, lower=lo, upper=hi, scale=scale,
                       zero_point=zero, axis=axis)


def _grid_view(qp: QuantParams, ndim: int):
    shape = qp.broadcast_shape(ndim)
    return qp.scale.reshape(shape), qp.zero_point.reshape(shape)


def quantize_codes(v: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Integer codes in [0, 2**bits - 1] for ``v``."""
    v = np.asarray(v)
    if qp.per_channel and v.shape[qp.axis] != qp.lower.shape[0]:
        raise ValueError(f"axis {qp.axis} length {v.shape[qp.axis]} != "
                         f"{qp.lower.shape[0]} channel params")
    scale, zero = _grid_view(qp, v.ndim)
    codes = np.rint(v.astype(np.float64) / scale) + zero
    return np.clip(codes, 0, qp.levels).astype(np.int64)


def dequantize_codes(codes: np.ndarray, qp: QuantParams) -> np.ndarray:
    scale, zero = _grid_view(qp, codes.ndim)
    return (scale * (codes.astype(np.float64) - zero)).astype(np.float32)


def fake_quantize(v: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Quantize-then-dequantize ``v`` onto the site's grid (float32 out)."""
    v = np.asarray(v, dtype=np.float32)
    if not np.isfinite(v).all():
        raise ValueError("values must be finite")
    return dequantize_codes(quantize_codes(v, qp), qp)


@dataclass(frozen=True)
class QuantizedTensor:
    """Integer codes plus the parameters that decode them."""

    codes: np.ndarray
    params: QuantParams

    def dequantize(self) -> np.ndarray:
        return dequantize_codes(self.codes, self.params)


def quantize_tensor(v: np.ndarray, qp: QuantParams) -> QuantizedTensor:
    codes = quantize_codes(v, qp)
    stored = codes.astype(np.uint8) if qp.bits <= 8 else codes.astype(np.int32)
    return QuantizedTensor(codes=stored, params=qp)


def ste_backward(upstream: np.ndarray, v: np.ndarray, qp: QuantParams):
    """Straight-through backward for a fake-quantize site.

    Returns (grad_v, grad_lower, grad_upper): upstream passes through where
    v is inside [l, u] and is zeroed outside; the bound gradients collect
    upstream over the regions clipped below / above.  Floats for per-tensor
    sites, per-channel vectors otherwise.
    """
    upstream = np.asarray(upstream)
    v = np.asarray(v)
    if upstream.shape != v.shape:
        raise ValueError(f"shape mismatch: {upstream.shape} vs {v.shape}")
    shape = qp.broadcast_shape(v.ndim)
    lo = qp.lower.reshape(shape)
    hi = qp.upper.reshape(shape)
    below = v < lo
    above = v > hi
    grad_v = np.where(below | above, np.float32(0.0), upstream).astype(np.float32)
    up64 = upstream.astype(np.float64)
    if qp.axis is None:
        grad_l = float(up64[below].sum())
        grad_u = float(up64[above].sum())
        return grad_v, grad_l, grad_u
    reduce_axes = tuple(i for i in range(v.ndim) if i != qp.axis)
    grad_l = np.where(below, up64, 0.0).sum(axis=reduce_axes)
    grad_u = np.where(above, up64, 0.0).sum(axis=reduce_axes)
    return grad_v, grad_l, grad_u


def qconv_forward(x, xqp: QuantParams, w, wqp: QuantParams, bias=None,
                  stride: int = 1, dilation: int = 1,
                  pad: PadMode = PadMode.ZERO) -> np.ndarray:
    """Convolution of fake-quantized activations with fake-quantized weights.

    The bias stays at full precision and is added after the quantized
    product.
    """
    if xqp.per_channel:
        raise ValueError("activation quantizer must be per-tensor")
    if wqp.axis not in (None, 0):
        raise ValueError("weight quantizer must be per-tensor or per-output-channel")
    return conv2d(fake_quantize(x, xqp), fake_quantize(w, wqp), bias,
                  stride=stride, dilation=dilation, pad=pad)
