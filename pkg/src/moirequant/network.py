"""Compact residual demoireing CNN with explicit forward/backward passes.

Five same-padded stride-1 3x3 convolutions (3-16-16-32-16-3 channels,
dilations 1/2/1/2/1) with ReLU between them and a global residual add.
The graph is small enough that the chain rule is written out by hand,
which keeps every gradient auditable against finite differences.

Quantizer slots hang off each convolution: a per-tensor activation site
(optionally preceded by a per-input-channel smoothing division) and a
dense weight reconstruction from a mixed-precision split.  Checkpoints
are "QDCK" containers: magic, u32 entry count, then length-prefixed
names with embedded QDT1 tensor blobs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .frequency import CalibConfig, FreqConfig, calibrate
from .ops import (PadMode, conv2d, conv2d_grad_bias, conv2d_grad_input,
                  conv2d_grad_weight, relu, relu_grad)
from .optim import AdamState, adam_step, cosine_lr
from .outliers import (SamplerConfig, MixedWeight, compute_smoothing_factors,
                       mixed_weight_apply, sample_channel_max, split_weights,
                       _MinMaxAccumulator, _ReservoirAccumulator,
                       _widen_if_degenerate)
from .quantize import (QuantizedTensor, QuantParams, compute_qparams,
                       fake_quantize, ste_backward)
from .rng import Xoshiro256, sample_indices, splitmix64
from .tensorio import tensor_from_bytes, tensor_to_bytes

ARCH = ((3, 16, 1), (16, 16, 2), (16, 32, 1), (32, 16, 2), (16, 3, 1))

CKPT_MAGIC = b"QDCK"

QUANT_METHODS = ("minmax", "percentile", "sample", "quantdemoire")


@dataclass
class ConvLayer:
    w: np.ndarray
    b: np.ndarray
    dilation: int


@dataclass
class LayerQuant:
    """Quantizer state for one convolution."""

    bits_a: int
    act_lower: np.float32
    act_upper: np.float32
    act_qp: QuantParams
    w_hat: np.ndarray
    mixed: MixedWeight
    smooth: np.ndarray | None = None  # float32 per-input-channel divisors


class ModelGraph:
    def __init__(self, layers: list[ConvLayer], quant: list[LayerQuant] | None = None):
        self.layers = layers
        self.quant = quant

    @property
    def is_quantized(self) -> bool:
        return self.quant is not None

    # -- forward ---------------------------------------------------------

    def forward_fp32(self, x: np.ndarray):
        x = np.ascontiguousarray(x, dtype=np.float32)
        inputs, pres = [], []
        a = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            inputs.append(a)
            pre = conv2d(a, layer.w, layer.b, dilation=layer.dilation)
            pres.append(pre)
            a = relu(pre) if i < last else pre
        out = x + a
        return out, {"x": x, "inputs": inputs, "pres": pres}

    def forward_quantized(self, x: np.ndarray):
        if self.quant is None:
            raise ValueError("model has no quantizer slots")
        x = np.ascontiguousarray(x, dtype=np.float32)
        xs_list, pres = [], []
        a = x
        last = len(self.layers) - 1
        for i, (layer, q) in enumerate(zip(self.layers, self.quant)):
            xs = a if q.smooth is None else a / q.smooth.reshape(1, -1, 1, 1)
            xs_list.append(xs)
            xq = fake_quantize(xs, q.act_qp)
            pre = conv2d(xq, q.w_hat, layer.b, dilation=layer.dilation)
            pres.append(pre)
            a = relu(pre) if i < last else pre
        out = x + a
        return out, {"x": x, "xs": xs_list, "pres": pres}

    def forward(self, x: np.ndarray, quantized: bool | None = None) -> np.ndarray:
        if quantized is None:
            quantized = self.is_quantized
        if quantized:
            out, _ = self.forward_quantized(x)
        else:
            out, _ = self.forward_fp32(x)
        return out

    # -- backward --------------------------------------------------------

    def backward_fp32(self, ctx, d_out: np.ndarray) -> dict:
        """Gradients of every conv weight/bias given dLoss/dOutput."""
        grads = {}
        up = np.ascontiguousarray(d_out, dtype=np.float32)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            a = ctx["inputs"][i]
            grads[f"w{i}"] = conv2d_grad_weight(up, a, layer.w.shape[2:],
                                                dilation=layer.dilation)
            grads[f"b{i}"] = conv2d_grad_bias(up)
            if i > 0:
                gin = conv2d_grad_input(up, layer.w, a.shape[2:],
                                        dilation=layer.dilation)
                up = relu_grad(gin, ctx["pres"][i - 1])
        return grads

    def backward_bounds(self, ctx, d_out: np.ndarray,
                        resolution_term: bool = False):
        """Per-layer activation-bound gradients via the straight-through sites.

        With ``resolution_term`` the bound gradients additionally carry the
        in-range rounding-as-identity term ((fq(v) - v) / (u - l) toward the
        upper bound and its negation toward the lower), which exposes the
        grid-resolution cost of wide bounds to the optimizer; the plain
        composition keeps only the clipped-region sums.
        """
        if self.quant is None:
            raise ValueError("model has no quantizer slots")
        up = np.ascontiguousarray(d_out, dtype=np.float32)
        out = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            q = self.quant[i]
            xs = ctx["xs"][i]
            g_xq = conv2d_grad_input(up, q.w_hat, xs.shape[2:],
                                     dilation=layer.dilation)
            gv, gl, gu = ste_backward(g_xq, xs, q.act_qp)
            if resolution_term:
                lo = float(q.act_lower)
                hi = float(q.act_upper)
                inside = (xs >= lo) & (xs <= hi)
                err = np.where(inside, fake_quantize(xs, q.act_qp) - xs, np.float32(0.0))
                corr = float((g_xq.astype(np.float64) * err).sum() / (hi - lo))
                gu += corr
                gl -= corr
            out[i] = (gl, gu)
            if i > 0:
                if q.smooth is not None:
                    gv = gv / q.smooth.reshape(1, -1, 1, 1)
                up = relu_grad(gv, ctx["pres"][i - 1])
        return out

    # -- quantizer bound access -------------------------------------------

    def get_act_bounds(self):
        if self.quant is None:
            raise ValueError("model has no quantizer slots")
        return [(float(q.act_lower), float(q.act_upper)) for q in self.quant]

    def set_act_bounds(self, i: int, lower: float, upper: float) -> None:
        if self.quant is None:
            raise ValueError("model has no quantizer slots")
        q = self.quant[i]
        l32 = np.float32(lower)
        u32 = np.float32(upper)
        if u32 <= l32:  # float32 rounding collapsed the gap
            u32 = np.nextafter(l32, np.float32(np.inf))
        q.act_lower = l32
        q.act_upper = u32
        q.act_qp = compute_qparams(float(l32), float(u32), q.bits_a)


def build_model(seed: int) -> ModelGraph:
    """Kaiming-uniform weights from the run seed, zero biases."""
    rng = Xoshiro256(splitmix64(seed, 1))
    layers = []
    for c_in, c_out, dilation in ARCH:
        fan_in = c_in * 9
        bound = float(np.sqrt(6.0 / fan_in))
        vals = np.array([rng.uniform(-bound, bound)
                         for _ in range(c_out * c_in * 9)], dtype=np.float32)
        layers.append(ConvLayer(w=vals.reshape(c_out, c_in, 3, 3),
                                b=np.zeros(c_out, dtype=np.float32),
                                dilation=dilation))
    return ModelGraph(layers)


def train_fp32(model: ModelGraph, pairs, epochs: int, lr0: float, seed: int):
    """Minimize mean-absolute error with Adam + cyclic cosine annealing.

    ``pairs`` is a list of (degraded, clean) NCHW float32 tensors.  The
    visit order is reshuffled every epoch from the seed.  Returns the
    per-step (step, lr, loss) trace; the model is updated in place.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty training set")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    params = {}
    for i, layer in enumerate(model.layers):
        params[f"w{i}"] = layer.w
        params[f"b{i}"] = layer.b
    state = AdamState.for_params(params)
    rng = Xoshiro256(splitmix64(seed, 2))
    steps_per_epoch = len(pairs)
    trace = []
    step = 0
    for _ in range(epochs):
        order = list(range(len(pairs)))
        rng.shuffle(order)
        for idx in order:
            x, gt = pairs[idx]
            lr = cosine_lr(step, steps_per_epoch, lr0, 0.0)
            out, ctx = model.forward_fp32(x)
            diff = out.astype(np.float64) - gt.astype(np.float64)
            loss = float(np.mean(np.abs(diff)))
            d_out = (np.sign(diff) / diff.size).astype(np.float32)
            grads = model.backward_fp32(ctx, d_out)
            adam_step(state, params, grads, lr)
            trace.append((step, lr, loss))
            step += 1
    return trace


# -- quantization pipeline -------------------------------------------------


def _layer_inputs(model: ModelGraph, x: np.ndarray):
    _, ctx = model.forward_fp32(x)
    return ctx["inputs"]


def quantize_model(model: ModelGraph, calib_pairs, bits_w: int, bits_a: int,
                   method: str = "quantdemoire",
                   sampler: SamplerConfig | None = None,
                   alpha: float = 0.5, beta: float = 0.005,
                   calib_cfg: CalibConfig | None = None,
                   freq_cfg: FreqConfig | None = None,
                   run_calibration: bool = True):
    """Build a statically quantized copy of ``model``.

    The full pipeline (method ``quantdemoire``) estimates per-channel
    activation magnitudes from subsamples, derives smoothing factors,
    estimates whole-tensor bounds on the smoothed activations, splits
    weights into 16-bit extremes plus a per-channel quantized bulk, and
    finally calibrates the activation bounds on the frequency-weighted
    loss.  Baselines (``minmax``, ``percentile``, ``sample``) skip
    smoothing, the mixed split and the calibration, differing only in how
    activation bounds are estimated.  Returns (quantized model, trace).
    """
    if method not in QUANT_METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {QUANT_METHODS}")
    for bits in (bits_w, bits_a):
        if not 2 <= int(bits) <= 16:
            raise ValueError(f"unsupported bit-width {bits}")
    calib_pairs = list(calib_pairs)
    if not calib_pairs:
        raise ValueError("empty calibration set")
    sampler = sampler or SamplerConfig()
    calib_cfg = calib_cfg or CalibConfig(seed=sampler.seed)
    freq_cfg = freq_cfg or FreqConfig()
    n_layers = len(model.layers)

    smooth_vecs: list[np.ndarray | None] = [None] * n_layers
    if method == "quantdemoire":
        rng_m = Xoshiro256(splitmix64(sampler.seed, 11))
        maxima = [np.zeros(c_in, dtype=np.float64) for c_in, _, _ in ARCH]
        for x, _ in calib_pairs:
            for i, a in enumerate(_layer_inputs(model, x)):
                for j in range(a.shape[1]):
                    m = sample_channel_max(a, j, sampler, rng_m)
                    if m > maxima[i][j]:
                        maxima[i][j] = m
        for i, layer in enumerate(model.layers):
            sv = compute_smoothing_factors(maxima[i], layer.w, alpha)
            vals = sv.values.copy()
            # a sampled maximum of zero means no magnitude evidence for the
            # channel (rarely active at small scale); the floored factor
            # would inflate it by ~1e4, so stay neutral there instead
            vals[maxima[i] == 0.0] = 1.0
            smooth_vecs[i] = vals.astype(np.float32)

    bounds: list[tuple[float, float]] = [None] * n_layers
    if method in ("quantdemoire", "sample"):
        rng_b = Xoshiro256(splitmix64(sampler.seed, 12))
        lo = [np.inf] * n_layers
        hi = [-np.inf] * n_layers
        for x, _ in calib_pairs:
            for i, a in enumerate(_layer_inputs(model, x)):
                if smooth_vecs[i] is not None:
                    a = a / smooth_vecs[i].reshape(1, -1, 1, 1)
                flat = a.ravel()
                picked = flat[sample_indices(rng_b, flat.size, sampler.gamma2)]
                lo[i] = min(lo[i], float(picked.min()))
                hi[i] = max(hi[i], float(picked.max()))
        bounds = [_widen_if_degenerate(lo[i], hi[i]) for i in range(n_layers)]
    else:
        accs = [_MinMaxAccumulator() if method == "minmax"
                else _ReservoirAccumulator(seed=splitmix64(sampler.seed, 13 + i))
                for i in range(n_layers)]
        for x, _ in calib_pairs:
            for i, a in enumerate(_layer_inputs(model, x)):
                accs[i].update(a)
        bounds = [acc.result() for acc in accs]

    layers = [ConvLayer(l.w.copy(), l.b.copy(), l.dilation) for l in model.layers]
    quant = []
    split_beta = beta if method == "quantdemoire" else 0.0
    for i, layer in enumerate(layers):
        w_eff = layer.w if smooth_vecs[i] is None else layer.w * smooth_vecs[i].reshape(1, -1, 1, 1)
        mixed = split_weights(w_eff, split_beta, bits_w)
        q = LayerQuant(bits_a=int(bits_a), act_lower=np.float32(0.0),
                       act_upper=np.float32(1.0),
                       act_qp=compute_qparams(0.0, 1.0, int(bits_a)),
                       w_hat=mixed_weight_apply(mixed), mixed=mixed,
                       smooth=smooth_vecs[i])
        quant.append(q)
    qmodel = ModelGraph(layers, quant)
    for i, (lo_i, hi_i) in enumerate(bounds):
        qmodel.set_act_bounds(i, lo_i, hi_i)

    trace = []
    if method == "quantdemoire" and run_calibration:
        trace = calibrate(qmodel, calib_pairs, calib_cfg, freq_cfg)
    return qmodel, trace


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, entries: dict[str, np.ndarray]) -> None:
    """QDCK container: sorted names, each with an embedded QDT1 blob."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(entries)))
        for name in sorted(entries):
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"entry name too long: {name!r}")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            blob = tensor_to_bytes(entries[name])
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic {buf[:4]!r}")
    (count,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (blob_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        entries[name] = tensor_from_bytes(buf[pos:pos + blob_len])
        pos += blob_len
    if pos != len(buf):
        raise ValueError("trailing bytes after checkpoint entries")
    return entries


def _pack_outliers(mw: MixedWeight) -> np.ndarray:
    """u32 count, then (u32 index, raw float16 bits) pairs, little-endian."""
    buf = bytearray(struct.pack("<I", mw.num_outliers))
    vals = mw.outlier_values.astype("<f2").view("<u2")
    for idx, bits in zip(mw.outlier_indices, vals):
        buf += struct.pack("<IH", int(idx), int(bits))
    return np.frombuffer(bytes(buf), dtype=np.uint8).copy()


def _unpack_outliers(blob: np.ndarray):
    raw = blob.tobytes()
    (count,) = struct.unpack_from("<I", raw, 0)
    idx = np.empty(count, dtype=np.int64)
    bits = np.empty(count, dtype="<u2")
    pos = 4
    for i in range(count):
        idx[i], bits[i] = struct.unpack_from("<IH", raw, pos)
        pos += 6
    return idx, bits.view("<f2").astype(np.float16)


def model_to_entries(model: ModelGraph, method: str = "fp32",
                     bits_w: int = 32, beta: float = 0.0) -> dict[str, np.ndarray]:
    entries = {}
    if not model.is_quantized:
        entries["meta/format"] = np.array([0], dtype=np.int32)
        for i, layer in enumerate(model.layers):
            entries[f"layer{i}/weight"] = layer.w
            entries[f"layer{i}/bias"] = layer.b
        return entries
    entries["meta/format"] = np.array([1], dtype=np.int32)
    entries["meta/bits"] = np.array([bits_w, model.quant[0].bits_a], dtype=np.int32)
    entries["meta/beta"] = np.array([beta], dtype=np.float32)
    entries["meta/method"] = np.frombuffer(method.encode("utf-8"), dtype=np.uint8).copy()
    for i, (layer, q) in enumerate(zip(model.layers, model.quant)):
        mw = q.mixed
        entries[f"layer{i}/bias"] = layer.b
        entries[f"layer{i}/w_codes"] = mw.normal.codes
        entries[f"layer{i}/w_lower"] = mw.normal.params.lower.astype(np.float32)
        entries[f"layer{i}/w_upper"] = mw.normal.params.upper.astype(np.float32)
        entries[f"layer{i}/w_outliers"] = _pack_outliers(mw)
        entries[f"layer{i}/w_thresh"] = np.array([mw.t_low, mw.t_high], dtype=np.float32)
        entries[f"layer{i}/act_bounds"] = np.array([q.act_lower, q.act_upper],
                                                   dtype=np.float32)
        if q.smooth is not None:
            entries[f"layer{i}/smooth"] = q.smooth
    return entries


def model_from_entries(entries: dict[str, np.ndarray]):
    """Rebuild a model from checkpoint entries.

    Returns (model, meta) where meta holds format/bits/beta/method.  For
    quantized checkpoints the dense weight reconstruction doubles as
    ``layer.w``.
    """
    fmt = int(entries["meta/format"][0])
    if fmt == 0:
        layers = []
        for i, (_, _, dilation) in enumerate(ARCH):
            layers.append(ConvLayer(w=entries[f"layer{i}/weight"].astype(np.float32),
                                    b=entries[f"layer{i}/bias"].astype(np.float32),
                                    dilation=dilation))
        return ModelGraph(layers), {"format": "fp32"}
    bits_w, bits_a = (int(v) for v in entries["meta/bits"])
    beta = float(entries["meta/beta"][0])
    method = entries["meta/method"].tobytes().decode("utf-8")
    layers, quant = [], []
    for i, (_, _, dilation) in enumerate(ARCH):
        codes = entries[f"layer{i}/w_codes"]
        lo = entries[f"layer{i}/w_lower"].astype(np.float64)
        hi = entries[f"layer{i}/w_upper"].astype(np.float64)
        qp = compute_qparams(lo, hi, bits_w, axis=0)
        idx, vals = _unpack_outliers(entries[f"layer{i}/w_outliers"])
        t_low, t_high = (float(v) for v in entries[f"layer{i}/w_thresh"])
        mixed = MixedWeight(normal=QuantizedTensor(codes=codes, params=qp),
                            outlier_indices=idx, outlier_values=vals,
                            beta=beta, t_low=t_low, t_high=t_high)
        w_hat = mixed_weight_apply(mixed)
        layers.append(ConvLayer(w=w_hat, b=entries[f"layer{i}/bias"].astype(np.float32),
                                dilation=dilation))
        smooth = entries.get(f"layer{i}/smooth")
        act_lo, act_hi = entries[f"layer{i}/act_bounds"]
        q = LayerQuant(bits_a=bits_a, act_lower=np.float32(act_lo),
                       act_upper=np.float32(act_hi),
                       act_qp=compute_qparams(float(act_lo), float(act_hi), bits_a),
                       w_hat=w_hat, mixed=mixed,
                       smooth=None if smooth is None else smooth.astype(np.float32))
        quant.append(q)
    model = ModelGraph(layers, quant)
    meta = {"format": "quantized", "bits_w": bits_w, "bits_a": bits_a,
            "beta": beta, "method": method}
    return model, meta


def evaluate_model(model: ModelGraph, pairs, quantized: bool | None = None):
    """Mean PSNR/SSIM of clipped model outputs against the clean targets.

    Returns (rows, summary): one row per pair with output and input
    metrics, and their means.
    """
    from .bench import psnr, ssim
    rows = []
    for x, gt in pairs:
        out = np.clip(model.forward(x, quantized=quantized), 0.0, 1.0).astype(np.float32)
        rows.append({"psnr": psnr(out, gt), "ssim": ssim(out, gt),
                     "psnr_in": psnr(np.clip(x, 0.0, 1.0), gt),
                     "ssim_in": ssim(np.clip(x, 0.0, 1.0), gt)})
    finite = [r["psnr"] for r in rows if np.isfinite(r["psnr"])]
    summary = {
        "psnr": float(np.mean(finite)) if finite else float("inf"),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
        "psnr_in": float(np.mean([r["psnr_in"] for r in rows])),
        "ssim_in": float(np.mean([r["ssim_in"] for r in rows])),
    }
    return rows, summary
