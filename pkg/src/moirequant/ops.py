"""Dense convolution and padding primitives.

Inputs and outputs are float32 NCHW arrays.  Convolution is
cross-correlation (no kernel flip) with same-size padding: each side is
padded by dilation * (k - 1) / 2, so stride-1 outputs keep the spatial
extent.  The per-element reduction order is fixed ascending (ci, kh, kw)
with a float64 accumulator seeded by the bias, making results
bit-deterministic and independent of threading.
"""

from __future__ import annotations

import enum

import numpy as np

from . import _kernels


class PadMode(enum.Enum):
    ZERO = "zero"
    REPLICATE = "replicate"


def _as_f32(x, name: str) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float32)
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


def _check_conv_args(x, w, stride, dilation):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"need 4-D input/weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"input channels {x.shape[1]} != weight channels {w.shape[1]}")
    if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise ValueError(f"kernel extents must be odd for same-size padding, got {w.shape[2:]}")
    if int(dilation) < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if int(stride) < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")


def pad2d(x: np.ndarray, ph: int, pw: int, mode: PadMode) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    spec = ((0, 0), (0, 0), (ph, ph), (pw, pw))
    if mode is PadMode.ZERO:
        return np.pad(x, spec)
    return np.pad(x, spec, mode="edge")


def unpad_grad(gxp: np.ndarray, ph: int, pw: int, mode: PadMode) -> np.ndarray:
    """Transpose of pad2d: fold padded-region gradients back onto the source."""
    if ph == 0 and pw == 0:
        return gxp
    n, c, hp, wp = gxp.shape
    h, w = hp - 2 * ph, wp - 2 * pw
    if mode is PadMode.ZERO:
        return np.ascontiguousarray(gxp[:, :, ph:hp - ph, pw:wp - pw])
    iy = np.clip(np.arange(-ph, h + ph), 0, h - 1)
    ix = np.clip(np.arange(-pw, w + pw), 0, w - 1)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    np.add.at(out, (slice(None), slice(None), iy[:, None], ix[None, :]), gxp.astype(np.float64))
    return out.astype(np.float32)


def conv_output_hw(h: int, w: int, kh: int, kw: int, stride: int, dilation: int) -> tuple[int, int]:
    ph = dilation * (kh - 1) // 2
    pw = dilation * (kw - 1) // 2
    ho = (h + 2 * ph - dilation * (kh - 1) - 1) // stride + 1
    wo = (w + 2 * pw - dilation * (kw - 1) - 1) // stride + 1
    return ho, wo


def conv2d(x, w, bias=None, stride: int = 1, dilation: int = 1,
           pad: PadMode = PadMode.ZERO) -> np.ndarray:
    """Same-padded cross-correlation of NCHW ``x`` with OIHW ``w``.

    With stride 1 the output matches the input extent.  ``bias`` is one
    float per output channel or None.
    """
    x = _as_f32(x, "input")
    w = _as_f32(w, "weight")
    _check_conv_args(x, w, stride, dilation)
    c_out, _, kh, kw = w.shape
    if bias is None:
        b = np.zeros(c_out, dtype=np.float32)
    else:
        b = _as_f32(bias, "bias").reshape(-1)
        if b.shape[0] != c_out:
            raise ValueError(f"bias length {b.shape[0]} != output channels {c_out}")
    ph = dilation * (kh - 1) // 2
    pw = dilation * (kw - 1) // 2
    xp = pad2d(x, ph, pw, pad)
    ho, wo = conv_output_hw(x.shape[2], x.shape[3], kh, kw, stride, dilation)
    out = np.empty((x.shape[0], c_out, ho, wo), dtype=np.float32)
    _kernels.conv2d_kernel(xp, w, b, stride, dilation, out)
    return out


def conv2d_grad_input(up, w, in_hw: tuple[int, int], stride: int = 1,
                      dilation: int = 1, pad: PadMode = PadMode.ZERO) -> np.ndarray:
    """Gradient of conv2d w.r.t. its (unpadded) input."""
    up = np.ascontiguousarray(up, dtype=np.float32)
    w = np.ascontiguousarray(w, dtype=np.float32)
    kh, kw = w.shape[2], w.shape[3]
    ph = dilation * (kh - 1) // 2
    pw = dilation * (kw - 1) // 2
    h, w_ = in_hw
    gxp = np.empty((up.shape[0], w.shape[1], h + 2 * ph, w_ + 2 * pw), dtype=np.float32)
    _kernels.conv2d_grad_input_kernel(up, w, stride, dilation, gxp)
    return unpad_grad(gxp, ph, pw, pad)


def conv2d_grad_weight(up, x, kernel_hw: tuple[int, int], stride: int = 1,
                       dilation: int = 1, pad: PadMode = PadMode.ZERO) -> np.ndarray:
    """Gradient of conv2d w.r.t. the weights."""
    kh, kw = kernel_hw
    xp = pad2d(np.ascontiguousarray(x, dtype=np.float32),
               dilation * (kh - 1) // 2, dilation * (kw - 1) // 2, pad)
    return grad_weight_from_padded(up, xp, kernel_hw, stride, dilation)


def grad_weight_from_padded(up, xp, kernel_hw, stride: int = 1, dilation: int = 1) -> np.ndarray:
    up = np.ascontiguousarray(up, dtype=np.float32)
    gw = np.empty((up.shape[1], xp.shape[1], kernel_hw[0], kernel_hw[1]), dtype=np.float32)
    _kernels.conv2d_grad_weight_kernel(up, xp, stride, dilation, gw)
    return gw


def conv2d_grad_bias(up) -> np.ndarray:
    return np.sum(up, axis=(0, 2, 3), dtype=np.float64).astype(np.float32)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def relu_grad(up: np.ndarray, preact: np.ndarray) -> np.ndarray:
    # gradient is 0 at exactly zero
    return np.where(preact > 0, up, np.float32(0.0))
