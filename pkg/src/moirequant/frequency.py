"""Frequency-weighted calibration of activation quantizer bounds.

Coarse quantization shows up most visibly as banding in smooth image
regions, so the calibration loss is computed on the low/mid-frequency
content of both images: an L-step chain of depthwise 3x3 low-pass
convolutions whose dilation doubles every step (2, 4, ..., 2**L),
replicate-padded so constants are exact fixed points.  The loss is a
pixel L1 term plus a feature distance from a small fixed-seed conv stack
(a dependency-free stand-in for a pretrained perceptual network), and
only the per-layer activation bounds are optimized, by Adam under cyclic
cosine annealing, with gradients flowing through the network's
straight-through quantizer sites.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import PadMode, conv2d, conv2d_grad_input, relu, relu_grad
from .optim import AdamState, adam_step, cosine_lr
from .rng import Xoshiro256, splitmix64

LOWPASS_KERNEL = np.array(
    [[1 / 16, 1 / 8, 1 / 16],
     [1 / 8, 1 / 4, 1 / 8],
     [1 / 16, 1 / 8, 1 / 16]], dtype=np.float32)

DEFAULT_PROXY_SEED = 0x9E3779B9

MIN_BOUND_GAP = 1e-4


@dataclass(frozen=True)
class FreqConfig:
    """Extraction depth; the 3x3 kernel itself is fixed."""

    level: int = 3
    kernel: np.ndarray = field(default_factory=lambda: LOWPASS_KERNEL.copy())

    def __post_init__(self):
        if self.level < 0:
            raise ValueError(f"level must be >= 0, got {self.level}")


@dataclass(frozen=True)
class CalibConfig:
    """Optimizer settings for the bound-calibration loop."""

    epochs: int = 4
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    crop: int = 64
    lambda_p: float = 1.0
    seed: int = 0
    proxy_seed: int = DEFAULT_PROXY_SEED

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.crop < 1:
            raise ValueError(f"crop must be >= 1, got {self.crop}")


@dataclass(frozen=True)
class LossReport:
    l1: float
    lp: float
    total: float


def _depthwise(x: np.ndarray, dilation: int) -> np.ndarray:
    n, c, h, w = x.shape
    flat = x.reshape(n * c, 1, h, w)
    out = conv2d(flat, LOWPASS_KERNEL[None, None], dilation=dilation,
                 pad=PadMode.REPLICATE)
    return out.reshape(n, c, h, w)


def _depthwise_backward(up: np.ndarray, dilation: int) -> np.ndarray:
    n, c, h, w = up.shape
    flat = np.ascontiguousarray(up.reshape(n * c, 1, h, w))
    gx = conv2d_grad_input(flat, LOWPASS_KERNEL[None, None], (h, w),
                           dilation=dilation, pad=PadMode.REPLICATE)
    return gx.reshape(n, c, h, w)


def frequency_extract(img: np.ndarray, level: int) -> np.ndarray:
    """L-step low-pass chain; step i uses dilation 2**i.  level=0 is identity."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 4:
        raise ValueError(f"expected NCHW image, got shape {img.shape}")
    out = img.copy() if level == 0 else img
    for i in range(1, level + 1):
        out = _depthwise(out, 2 ** i)
    return out


def frequency_extract_backward(up: np.ndarray, level: int) -> np.ndarray:
    """Gradient of frequency_extract w.r.t. its input (linear transpose)."""
    out = np.asarray(up, dtype=np.float32)
    for i in range(level, 0, -1):
        out = _depthwise_backward(out, 2 ** i)
    return out


_PROXY_CHANNELS = (3, 8, 16, 32)


class PerceptualProxy:
    """Fixed-seed 3-stage conv feature stack for a perceptual distance.

    Stages are 3x3 stride-2 convolutions (3 -> 8 -> 16 -> 32 channels, no
    bias) with ReLU, Kaiming-uniform initialized from the seed.  The
    distance between two images is the mean absolute difference of their
    final-stage features.
    """

    def __init__(self, seed: int = DEFAULT_PROXY_SEED):
        self.seed = seed
        rng = Xoshiro256(splitmix64(seed, 101))
        self.weights = []
        for c_in, c_out in zip(_PROXY_CHANNELS[:-1], _PROXY_CHANNELS[1:]):
            fan_in = c_in * 9
            bound = float(np.sqrt(6.0 / fan_in))
            vals = np.array([rng.uniform(-bound, bound)
                             for _ in range(c_out * c_in * 9)], dtype=np.float32)
            self.weights.append(vals.reshape(c_out, c_in, 3, 3))

    def features(self, x: np.ndarray):
        h = np.asarray(x, dtype=np.float32)
        ctx = []
        for w in self.weights:
            pre = conv2d(h, w, stride=2)
            ctx.append((h.shape[2:], pre))
            h = relu(pre)
        return h, ctx

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        fa, _ = self.features(a)
        fb, _ = self.features(b)
        return float(np.mean(np.abs(fa.astype(np.float64) - fb.astype(np.float64))))

    def distance_and_grad(self, a: np.ndarray, b: np.ndarray):
        """Distance plus its gradient w.r.t. ``a``."""
        fa, ctx_a = self.features(a)
        fb, _ = self.features(b)
        diff = fa.astype(np.float64) - fb.astype(np.float64)
        lp = float(np.mean(np.abs(diff)))
        g = (np.sign(diff) / diff.size).astype(np.float32)
        for w, (in_hw, pre) in zip(reversed(self.weights), reversed(ctx_a)):
            g = relu_grad(g, pre)
            g = conv2d_grad_input(g, w, in_hw, stride=2)
        return lp, g


_PROXY_CACHE: dict[int, PerceptualProxy] = {}


def get_proxy(seed: int = DEFAULT_PROXY_SEED) -> PerceptualProxy:
    proxy = _PROXY_CACHE.get(seed)
    if proxy is None:
        proxy = _PROXY_CACHE[seed] = PerceptualProxy(seed)
    return proxy


def perceptual_proxy(a: np.ndarray, b: np.ndarray,
                     seed: int = DEFAULT_PROXY_SEED) -> float:
    """Feature-space mean absolute difference between two images."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return get_proxy(seed).distance(a, b)


def calib_loss(out: np.ndarray, gt: np.ndarray, fc: FreqConfig,
               lambda_p: float = 1.0,
               proxy_seed: int = DEFAULT_PROXY_SEED) -> LossReport:
    """L1 plus weighted perceptual distance on extracted low/mid frequencies."""
    out = np.asarray(out, dtype=np.float32)
    gt = np.asarray(gt, dtype=np.float32)
    if out.shape != gt.shape:
        raise ValueError(f"shape mismatch: {out.shape} vs {gt.shape}")
    fo = frequency_extract(out, fc.level)
    fg = frequency_extract(gt, fc.level)
    l1 = float(np.mean(np.abs(fo.astype(np.float64) - fg.astype(np.float64))))
    lp = get_proxy(proxy_seed).distance(fo, fg)
    return LossReport(l1=l1, lp=lp, total=l1 + lambda_p * lp)


def _crop_pair(moire, clean, crop, rng):
    h, w = moire.shape[2], moire.shape[3]
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} exceeds image size {h}x{w}")
    if crop == h and crop == w:
        return moire, clean
    top = rng.below(h - crop + 1)
    left = rng.below(w - crop + 1)
    return (np.ascontiguousarray(moire[:, :, top:top + crop, left:left + crop]),
            np.ascontiguousarray(clean[:, :, top:top + crop, left:left + crop]))


def calibrate(model, pairs, cc: CalibConfig, fc: FreqConfig):
    """Optimize the model's activation bounds on (degraded, clean) pairs.

    Runs Adam on the per-layer (lower, upper) activation bounds with
    gradients from the frequency-weighted loss, restarting the cosine
    schedule every epoch, and projects upper >= lower + 1e-4 after each
    step.  Returns the per-step trace rows (step, lr, l1, lp, total); the
    model is updated in place.  A model without quantizers is left
    untouched (empty trace).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty calibration set")
    if not getattr(model, "is_quantized", False):
        return []
    bounds = model.get_act_bounds()
    lower = np.array([b[0] for b in bounds], dtype=np.float64)
    upper = np.array([b[1] for b in bounds], dtype=np.float64)
    params = {"lower": lower, "upper": upper}
    state = AdamState.for_params(params)
    proxy = get_proxy(cc.proxy_seed)
    rng = Xoshiro256(splitmix64(cc.seed, 7))
    steps_per_epoch = len(pairs)
    trace = []
    step = 0
    for _ in range(cc.epochs):
        for moire, clean in pairs:
            x, gt = _crop_pair(moire, clean, cc.crop, rng)
            lr = cosine_lr(step, steps_per_epoch, cc.lr0, 0.0)
            out, ctx = model.forward_quantized(x)
            fo = frequency_extract(out, fc.level)
            fg = frequency_extract(gt, fc.level)
            diff = fo.astype(np.float64) - fg.astype(np.float64)
            l1 = float(np.mean(np.abs(diff)))
            g_fo = (np.sign(diff) / diff.size).astype(np.float32)
            lp, g_lp = proxy.distance_and_grad(fo, fg)
            g_fo = g_fo + np.float32(cc.lambda_p) * g_lp
            g_out = frequency_extract_backward(g_fo, fc.level)
            layer_grads = model.backward_bounds(ctx, g_out, resolution_term=True)
            grads = {"lower": np.array([g[0] for g in layer_grads]),
                     "upper": np.array([g[1] for g in layer_grads])}
            adam_step(state, params, grads, lr,
                      beta1=cc.beta1, beta2=cc.beta2, eps=cc.eps)
            np.maximum(params["upper"], params["lower"] + MIN_BOUND_GAP,
                       out=params["upper"])
            for i in range(lower.shape[0]):
                model.set_act_bounds(i, float(params["lower"][i]),
                                     float(params["upper"][i]))
            trace.append((step, lr, l1, lp, l1 + cc.lambda_p * lp))
            step += 1
    return trace


def write_loss_trace(rows, path) -> None:
    """CSV trace: one ``step,lr,l1,lp,total`` line per optimization step."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,lr,l1,lp,total\n")
        for step, lr, l1, lp, total in rows:
            fh.write(f"{step},{lr:.10g},{l1:.10g},{lp:.10g},{total:.10g}\n")
