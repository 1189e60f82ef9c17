"""Portable binary tensor and image I/O.

Tensor container "QDT1": magic ``QDT1``, u8 dtype code (0=f32, 1=f16,
2=i32, 3=u8), u8 ndim (1..8), u16 zero, ndim little-endian u32 extents,
then the row-major little-endian payload.  Round-trips are bit-exact.

Images are binary PPM (P6, maxval 255); bytes map to floats through
b / 255 on read and round(clip(v, 0, 1) * 255) with ties-to-even on
write.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"QDT1"

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f2"): 1,
    np.dtype("<i4"): 2,
    np.dtype("u1"): 3,
}
_CODE_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f2"),
    2: np.dtype("<i4"),
    3: np.dtype("u1"),
}

_MAX_ELEMENTS = 1 << 48


class TensorFormatError(ValueError):
    """Malformed QDT1 container (bad field, dims overflow, trailing bytes)."""


class BadMagicError(TensorFormatError):
    """Leading bytes are not the QDT1 magic."""


class TruncatedFileError(TensorFormatError):
    """File ends before the declared header or payload."""


class ImageFormatError(ValueError):
    """Not a binary P6 PPM with maxval 255."""


def tensor_to_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    if t.ndim < 1 or t.ndim > 8:
        raise TensorFormatError(f"ndim must be 1..8, got {t.ndim}")
    if any(d < 1 for d in t.shape):
        raise TensorFormatError(f"extents must be positive, got {t.shape}")
    if any(d > 0xFFFFFFFF for d in t.shape):
        raise TensorFormatError(f"extent exceeds u32 range: {t.shape}")
    dt = t.dtype.newbyteorder("<") if t.dtype.byteorder == ">" else t.dtype
    if dt not in _DTYPE_CODES:
        raise TensorFormatError(f"unsupported dtype {t.dtype}")
    header = struct.pack("<4sBBH", MAGIC, _DTYPE_CODES[dt], t.ndim, 0)
    dims = struct.pack(f"<{t.ndim}I", *t.shape)
    payload = np.ascontiguousarray(t, dtype=dt).tobytes()
    return header + dims + payload


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise TruncatedFileError("header shorter than 8 bytes")
    magic, code, ndim, reserved = struct.unpack_from("<4sBBH", buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if code not in _CODE_DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    if not 1 <= ndim <= 8:
        raise TensorFormatError(f"ndim must be 1..8, got {ndim}")
    if reserved != 0:
        raise TensorFormatError("reserved field must be zero")
    if len(buf) < 8 + 4 * ndim:
        raise TruncatedFileError("header ends before the extents")
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    if any(d < 1 for d in dims):
        raise TensorFormatError(f"extents must be positive, got {dims}")
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_ELEMENTS:
        raise TensorFormatError(f"dim product overflow: {dims}")
    dt = _CODE_DTYPES[code]
    start = 8 + 4 * ndim
    need = count * dt.itemsize
    avail = len(buf) - start
    if avail < need:
        raise TruncatedFileError(f"payload needs {need} bytes, have {avail}")
    if avail > need:
        raise TensorFormatError(f"{avail - need} trailing bytes after payload")
    arr = np.frombuffer(buf, dtype=dt, count=count, offset=start)
    return arr.reshape(dims).copy()


def write_tensor(t: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


def _next_ppm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise ImageFormatError("unexpected end of PPM header")
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM into a [1, 3, H, W] float32 tensor in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _next_ppm_token(buf, 0)
    if magic != b"P6":
        raise ImageFormatError(f"expected P6 magic, got {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _next_ppm_token(buf, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"non-numeric header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise ImageFormatError(f"payload needs {need} bytes, have {len(payload)}")
    img = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / np.float32(255.0)
    img = img.reshape(height, width, 3).transpose(2, 0, 1)
    return np.ascontiguousarray(img)[None]


def write_ppm(t: np.ndarray, path) -> None:
    """Write a [1, 3, H, W] (or [3, H, W]) tensor as binary P6."""
    t = np.asarray(t, dtype=np.float32)
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ValueError(f"expected batch of 1, got {t.shape}")
        t = t[0]
    if t.ndim != 3 or t.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] image, got shape {t.shape}")
    h, w = t.shape[1], t.shape[2]
    scaled = np.rint(np.clip(t.astype(np.float64), 0.0, 1.0) * 255.0)
    payload = scaled.astype(np.uint8).transpose(1, 2, 0).tobytes()
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(payload)
