"""Compiled inner loops.

Every kernel reduces each output element in a fixed ascending order with a
float64 accumulator, so results are bit-identical across runs and thread
counts: parallelism only ever splits disjoint output elements, never a
reduction.  The stride-1 paths (everything except the stride-2 feature
stack) absorb tap offsets into unit-step row slices so the innermost
loops index by a pure induction variable, which the compiler vectorizes;
the general-stride paths compute the same sums in the same order.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def conv2d_kernel(xp, w, bias, stride, dil, out):
    """Cross-correlation over a pre-padded input.

    Per output element the reduction starts from the bias and accumulates
    taps in ascending (ci, kh, kw) order in float64.
    """
    n_batch, c_in, _, _ = xp.shape
    c_out, _, kh_n, kw_n = w.shape
    h_out, w_out = out.shape[2], out.shape[3]
    for nc in prange(n_batch * c_out):
        n = nc // c_out
        co = nc % c_out
        acc = np.empty((h_out, w_out), np.float64)
        b = np.float64(bias[co])
        for h in range(h_out):
            for x in range(w_out):
                acc[h, x] = b
        if stride == 1:
            for ci in range(c_in):
                for kh in range(kh_n):
                    for kw in range(kw_n):
                        wv = np.float64(w[co, ci, kh, kw])
                        woff = kw * dil
                        for h in range(h_out):
                            xrow = xp[n, ci, h + kh * dil, woff:]
                            arow = acc[h]
                            for x in range(w_out):
                                arow[x] += np.float64(xrow[x]) * wv
        else:
            for ci in range(c_in):
                for kh in range(kh_n):
                    for kw in range(kw_n):
                        wv = np.float64(w[co, ci, kh, kw])
                        woff = kw * dil
                        for h in range(h_out):
                            xrow = xp[n, ci, h * stride + kh * dil]
                            arow = acc[h]
                            for x in range(w_out):
                                arow[x] += np.float64(xrow[x * stride + woff]) * wv
        for h in range(h_out):
            for x in range(w_out):
                out[n, co, h, x] = np.float32(acc[h, x])


@njit(cache=True, parallel=True)
def conv2d_grad_input_kernel(up, w, stride, dil, gx):
    """Gradient w.r.t. the padded input; ascending (co, kh, kw) order."""
    n_batch, c_out, h_out, w_out = up.shape
    _, c_in, kh_n, kw_n = w.shape
    hp, wp = gx.shape[2], gx.shape[3]
    for nci in prange(n_batch * c_in):
        n = nci // c_in
        ci = nci % c_in
        acc = np.zeros((hp, wp), np.float64)
        if stride == 1:
            for co in range(c_out):
                for kh in range(kh_n):
                    for kw in range(kw_n):
                        wv = np.float64(w[co, ci, kh, kw])
                        woff = kw * dil
                        for h in range(h_out):
                            urow = up[n, co, h]
                            arow = acc[h + kh * dil, woff:]
                            for x in range(w_out):
                                arow[x] += np.float64(urow[x]) * wv
        else:
            for co in range(c_out):
                for kh in range(kh_n):
                    for kw in range(kw_n):
                        wv = np.float64(w[co, ci, kh, kw])
                        woff = kw * dil
                        for h in range(h_out):
                            urow = up[n, co, h]
                            arow = acc[h * stride + kh * dil]
                            for x in range(w_out):
                                arow[x * stride + woff] += np.float64(urow[x]) * wv
        for h in range(hp):
            for x in range(wp):
                gx[n, ci, h, x] = np.float32(acc[h, x])


@njit(cache=True, parallel=True)
def conv2d_grad_weight_kernel(up, xp, stride, dil, gw):
    """Gradient w.r.t. the weights.

    Deterministic fixed-order reduction per weight element: a float64
    column buffer accumulates rows in ascending (n, h) order (vectorized
    across columns), then folds left to right.
    """
    n_batch, c_out, h_out, w_out = up.shape
    _, c_in, _, _ = xp.shape
    kh_n, kw_n = gw.shape[2], gw.shape[3]
    for coci in prange(c_out * c_in):
        co = coci // c_in
        ci = coci % c_in
        buf = np.empty(w_out, np.float64)
        for kh in range(kh_n):
            for kw in range(kw_n):
                woff = kw * dil
                for x in range(w_out):
                    buf[x] = 0.0
                if stride == 1:
                    for n in range(n_batch):
                        for h in range(h_out):
                            urow = up[n, co, h]
                            xrow = xp[n, ci, h + kh * dil, woff:]
                            for x in range(w_out):
                                buf[x] += np.float64(urow[x]) * np.float64(xrow[x])
                else:
                    for n in range(n_batch):
                        for h in range(h_out):
                            urow = up[n, co, h]
                            xrow = xp[n, ci, h * stride + kh * dil]
                            for x in range(w_out):
                                buf[x] += np.float64(urow[x]) * np.float64(xrow[x * stride + woff])
                acc = 0.0
                for x in range(w_out):
                    acc += buf[x]
                gw[co, ci, kh, kw] = np.float32(acc)


@njit(cache=True)
def _xoshiro_next(s):
    r = s[1] * np.uint64(5)
    r = ((r << np.uint64(7)) | (r >> np.uint64(57))) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = (s[3] << np.uint64(45)) | (s[3] >> np.uint64(19))
    return r


@njit(cache=True)
def xoshiro_fill(state, out):
    """Fill ``out`` (uint64) from the xoshiro256** stream; state advances."""
    for i in range(out.shape[0]):
        out[i] = _xoshiro_next(state)


@njit(cache=True)
def reservoir_update(pool, filled, total, values, state):
    """Algorithm R over a chunk of values; returns updated (filled, total).

    ``pool`` is the reservoir, ``filled``/``total`` the element counts so
    far, ``state`` the uint64[4] xoshiro256** state (advanced in place).
    """
    cap = pool.shape[0]
    for i in range(values.shape[0]):
        if filled < cap:
            pool[filled] = values[i]
            filled += 1
        else:
            r = _xoshiro_next(state) % np.uint64(total + 1)
            if r < np.uint64(cap):
                pool[r] = values[i]
        total += 1
    return filled, total
