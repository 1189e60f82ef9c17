"""Outlier-aware range estimation and mixed-precision weight splitting.

Activation ranges are estimated from small random subsamples rather than
global extrema, so rare extreme values stop inflating the quantization
range.  Channel imbalance is reduced by migrating scale from activations
into weights through per-input-channel smoothing factors.  Weight tensors
keep their most extreme values in 16-bit floats (with indices) while the
rest is quantized per output channel.  MinMax and percentile range
estimators are included as baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .quantize import QuantizedTensor, compute_qparams, dequantize_codes, quantize_tensor
from .rng import Xoshiro256, sample_indices

EPS_FLOOR = 1e-8
DEGENERATE_PAD = 1e-4
RESERVOIR_CAP = 1 << 20


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling fractions for range estimation.

    ``gamma1`` drives the per-channel magnitude estimate, ``gamma2`` the
    whole-tensor bound estimate.
    """

    gamma1: float = 1e-3
    gamma2: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("gamma1", "gamma2"):
            g = getattr(self, name)
            if not 0.0 < g <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {g}")


@dataclass(frozen=True)
class SmoothingVector:
    """Per-input-channel scale factors, all positive and finite."""

    values: np.ndarray
    alpha: float = 0.5

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("smoothing factors must be a 1-D vector")
        if not (np.isfinite(v).all() and (v > 0).all()):
            raise ValueError("smoothing factors must be positive and finite")
        object.__setattr__(self, "values", v)


def _channel_flat(x: np.ndarray, channel: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"need a channel axis, got shape {x.shape}")
    if not 0 <= channel < x.shape[1]:
        raise ValueError(f"channel {channel} out of range [0, {x.shape[1]})")
    if x.ndim == 2:
        flat = x[:, channel].ravel()
    else:
        flat = np.moveaxis(x, 1, 0)[channel].ravel()
    if flat.size == 0:
        raise ValueError("channel is empty")
    return flat


def sample_channel_max(x: np.ndarray, channel: int, cfg: SamplerConfig,
                       rng: Xoshiro256 | None = None) -> float:
    """Largest magnitude over a gamma1 subsample of one channel.

    Pass a shared ``rng`` to thread the sampling stream across a whole
    calibration set (take the running max of the per-tensor results).
    """
    flat = _channel_flat(x, channel)
    if rng is None:
        rng = Xoshiro256(cfg.seed)
    idx = sample_indices(rng, flat.size, cfg.gamma1)
    return float(np.abs(flat[idx]).max())


def compute_smoothing_factors(channel_maxima, weight: np.ndarray,
                              alpha: float = 0.5) -> SmoothingVector:
    """Balance activation and weight magnitudes per input channel.

    s_j = M_j**alpha / max|W[:, j]|**(1 - alpha), with both magnitudes
    floored at 1e-8 before exponentiation so dead channels stay finite.
    The weight side uses the exact maximum.
    """
    m = np.asarray(channel_maxima, dtype=np.float64).reshape(-1)
    w = np.asarray(weight)
    if w.ndim < 2:
        raise ValueError(f"weight needs an input-channel axis, got {w.shape}")
    if m.shape[0] != w.shape[1]:
        raise ValueError(f"{m.shape[0]} channel maxima for {w.shape[1]} input channels")
    wmax = np.abs(np.moveaxis(w, 1, 0).reshape(w.shape[1], -1)).max(axis=1).astype(np.float64)
    m = np.maximum(m, EPS_FLOOR)
    wmax = np.maximum(wmax, EPS_FLOOR)
    s = m ** alpha / wmax ** (1.0 - alpha)
    return SmoothingVector(values=s, alpha=alpha)


def apply_smoothing(x: np.ndarray, w: np.ndarray, sv: SmoothingVector):
    """Divide activations and multiply weights per input channel.

    The layer output is unchanged: conv(x / s, w * s) == conv(x, w) up to
    rounding.
    """
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    s = sv.values
    if x.shape[1] != s.shape[0] or w.shape[1] != s.shape[0]:
        raise ValueError(f"channel counts differ: x {x.shape[1]}, w {w.shape[1]}, s {s.shape[0]}")
    s32 = s.astype(np.float32)
    xs = x / s32.reshape((1, -1) + (1,) * (x.ndim - 2))
    ws = w * s32.reshape((1, -1) + (1,) * (w.ndim - 2))
    return xs, ws


def _widen_if_degenerate(lo: float, hi: float) -> tuple[float, float]:
    if lo == hi:
        pad = DEGENERATE_PAD * max(1.0, abs(hi))
        return lo - pad, hi + pad
    return lo, hi


def sample_tensor_bounds(stream, cfg: SamplerConfig,
                         rng: Xoshiro256 | None = None) -> tuple[float, float]:
    """Signed (lower, upper) bounds from gamma2 subsamples of a tensor stream.

    Each tensor contributes a subsample; the bounds are the running
    min/max over the whole stream.  A degenerate interval is widened by
    +-1e-4 * max(1, |u|).
    """
    if rng is None:
        rng = Xoshiro256(cfg.seed)
    lo = np.inf
    hi = -np.inf
    seen = False
    for x in stream:
        flat = np.asarray(x).ravel()
        if flat.size == 0:
            raise ValueError("empty tensor in stream")
        seen = True
        idx = sample_indices(rng, flat.size, cfg.gamma2)
        picked = flat[idx]
        lo = min(lo, float(picked.min()))
        hi = max(hi, float(picked.max()))
    if not seen:
        raise ValueError("empty calibration stream")
    return _widen_if_degenerate(lo, hi)


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile of the flattened values.

    Sorted order, fractional position p * (N - 1), linear interpolation
    between the two neighbours.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValueError("percentile of empty values")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    srt = np.sort(flat)
    pos = p * (srt.size - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, srt.size - 1)
    frac = pos - lo
    return float(srt[lo] + (srt[hi] - srt[lo]) * frac)


@dataclass(frozen=True)
class MixedWeight:
    """Quantized bulk plus sparsely stored 16-bit extreme weights.

    ``normal`` holds per-output-channel codes for every position;
    positions listed in ``outlier_indices`` (strictly increasing flat
    indices) are overridden by ``outlier_values`` on reconstruction.
    """

    normal: QuantizedTensor
    outlier_indices: np.ndarray
    outlier_values: np.ndarray
    beta: float
    t_low: float
    t_high: float

    def __post_init__(self):
        idx = np.asarray(self.outlier_indices, dtype=np.int64)
        vals = np.asarray(self.outlier_values, dtype=np.float16)
        if idx.shape != vals.shape or idx.ndim != 1:
            raise ValueError("outlier indices/values must be matching 1-D arrays")
        if idx.size and (np.diff(idx) <= 0).any():
            raise ValueError("outlier indices must be strictly increasing")
        object.__setattr__(self, "outlier_indices", idx)
        object.__setattr__(self, "outlier_values", vals)

    @property
    def num_outliers(self) -> int:
        return int(self.outlier_indices.size)


def _normal_channel_bounds(w: np.ndarray, outlier_mask: np.ndarray):
    c_out = w.shape[0]
    per_ch = w.reshape(c_out, -1)
    mask = outlier_mask.reshape(c_out, -1)
    lo = np.empty(c_out, dtype=np.float64)
    hi = np.empty(c_out, dtype=np.float64)
    for c in range(c_out):
        vals = per_ch[c][~mask[c]]
        if vals.size == 0:
            lo[c], hi[c] = -DEGENERATE_PAD, DEGENERATE_PAD
            continue
        lo[c], hi[c] = _widen_if_degenerate(float(vals.min()), float(vals.max()))
    return lo, hi


def split_weights(w: np.ndarray, beta: float, bits: int) -> MixedWeight:
    """Split a weight tensor into 16-bit extremes and a quantized bulk.

    Values strictly outside the [beta, 1 - beta] percentile band (over the
    whole tensor) are kept as float16 with their flat indices; the rest is
    quantized per output channel with bounds from the remaining values.
    """
    w = np.asarray(w, dtype=np.float32)
    if w.ndim < 2:
        raise ValueError(f"weight needs an output-channel axis, got {w.shape}")
    if not 0.0 <= beta < 0.5:
        raise ValueError(f"beta must be in [0, 0.5), got {beta}")
    flat = w.ravel()
    t_low = percentile(flat, beta)
    t_high = percentile(flat, 1.0 - beta)
    mask = (flat < t_low) | (flat > t_high)
    idx = np.nonzero(mask)[0].astype(np.int64)
    vals = flat[idx].astype(np.float16)
    lo, hi = _normal_channel_bounds(w, mask)
    qp = compute_qparams(lo, hi, bits, axis=0)
    return MixedWeight(normal=quantize_tensor(w, qp), outlier_indices=idx,
                       outlier_values=vals, beta=float(beta),
                       t_low=t_low, t_high=t_high)


def mixed_weight_apply(mw: MixedWeight) -> np.ndarray:
    """Dense float32 reconstruction: dequantized bulk with 16-bit overrides."""
    dense = dequantize_codes(mw.normal.codes, mw.normal.params)
    flat = dense.ravel()
    if mw.num_outliers:
        if int(mw.outlier_indices[-1]) >= flat.size or int(mw.outlier_indices[0]) < 0:
            raise ValueError("outlier index out of range")
        flat[mw.outlier_indices] = mw.outlier_values.astype(np.float32)
    return dense


@dataclass
class _MinMaxAccumulator:
    lo: float = np.inf
    hi: float = -np.inf
    seen: bool = False

    def update(self, x):
        flat = np.asarray(x).ravel()
        if flat.size == 0:
            raise ValueError("empty tensor in stream")
        self.seen = True
        self.lo = min(self.lo, float(flat.min()))
        self.hi = max(self.hi, float(flat.max()))

    def result(self):
        if not self.seen:
            raise ValueError("empty calibration stream")
        return _widen_if_degenerate(self.lo, self.hi)


@dataclass
class _ReservoirAccumulator:
    """Pooled values capped by reservoir sampling (Algorithm R)."""

    p: float = 0.999
    cap: int = RESERVOIR_CAP
    seed: int = 0
    pool: np.ndarray = field(init=False)
    filled: int = field(init=False, default=0)
    total: int = field(init=False, default=0)
    _state: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        self.pool = np.empty(self.cap, dtype=np.float32)
        self._state = np.array(Xoshiro256(self.seed).state_words(), dtype=np.uint64)

    def update(self, x):
        flat = np.ascontiguousarray(np.asarray(x, dtype=np.float32).ravel())
        if flat.size == 0:
            raise ValueError("empty tensor in stream")
        self.filled, self.total = _kernels.reservoir_update(
            self.pool, self.filled, self.total, flat, self._state)

    def result(self):
        if self.total == 0:
            raise ValueError("empty calibration stream")
        pool = self.pool[:self.filled]
        return _widen_if_degenerate(percentile(pool, 1.0 - self.p),
                                    percentile(pool, self.p))


def baseline_bounds(stream, mode: str = "minmax", p: float = 0.999,
                    seed: int = 0) -> tuple[float, float]:
    """Reference bound estimators: exact extrema or pooled percentiles.

    ``minmax`` takes the global min/max of the stream; ``percentile``
    pools values (reservoir-capped at 2**20) and returns the symmetric
    (P_{1-p}, P_p) band.
    """
    if mode == "minmax":
        acc = _MinMaxAccumulator()
    elif mode == "percentile":
        acc = _ReservoirAccumulator(p=p, seed=seed)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for x in stream:
        acc.update(x)
    return acc.result()
