"""Independent reference implementations used as test oracles.

These deliberately avoid the library's compiled kernels: convolution is a
plain nested loop with its own border handling, and the weight split is a
sort-based brute force.
"""

import numpy as np


def conv2d_oracle(x, w, bias=None, stride=1, dilation=1, pad="zero"):
    """Nested-loop same-padded cross-correlation.

    Bias-seeded float64 accumulation in ascending (ci, kh, kw) order, cast
    to float32 per element: the exact contract the fast path must match
    bit for bit.
    """
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    n_b, c_in, h, wd = x.shape
    c_out, _, kh_n, kw_n = w.shape
    ph = dilation * (kh_n - 1) // 2
    pw = dilation * (kw_n - 1) // 2
    ho = (h + 2 * ph - dilation * (kh_n - 1) - 1) // stride + 1
    wo = (wd + 2 * pw - dilation * (kw_n - 1) - 1) // stride + 1
    if bias is None:
        bias = np.zeros(c_out, dtype=np.float32)
    out = np.empty((n_b, c_out, ho, wo), dtype=np.float32)
    for n in range(n_b):
        for co in range(c_out):
            for oh in range(ho):
                for ow in range(wo):
                    acc = np.float64(bias[co])
                    for ci in range(c_in):
                        for kh in range(kh_n):
                            for kw in range(kw_n):
                                iy = oh * stride + kh * dilation - ph
                                ix = ow * stride + kw * dilation - pw
                                if 0 <= iy < h and 0 <= ix < wd:
                                    v = x[n, ci, iy, ix]
                                elif pad == "zero":
                                    continue
                                else:  # replicate
                                    v = x[n, ci, min(max(iy, 0), h - 1),
                                          min(max(ix, 0), wd - 1)]
                                acc += np.float64(v) * np.float64(w[co, ci, kh, kw])
                    out[n, co, oh, ow] = np.float32(acc)
    return out


def split_oracle(values, beta):
    """Sort-based outlier selection: flat indices of values strictly outside
    the [beta, 1-beta] linear-interpolation percentile band."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    srt = np.sort(flat)

    def pct(p):
        pos = p * (srt.size - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, srt.size - 1)
        return srt[lo] + (srt[hi] - srt[lo]) * (pos - lo)

    t_low, t_high = pct(beta), pct(1.0 - beta)
    return np.nonzero((flat < t_low) | (flat > t_high))[0]


def central_diff(f, x0, h):
    """Scalar central finite difference of ``f`` at ``x0``."""
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h)


def rel_err(approx, exact, floor=1e-12):
    return abs(approx - exact) / max(abs(exact), floor)
