"""Synthetic moire benchmark and image-quality metrics.

Clean images are smooth random fields (low-frequency Gaussian color blobs
over a linear gradient); their degraded counterparts add a few sinusoidal
color gratings on a mildly gamma-warped base, which reproduces the
colored low/mid-frequency stripe structure of screen-capture moire in a
fully seeded, parameter-controllable way.  Every image is derived from
one 64-bit seed, so datasets regenerate byte-identically.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256, splitmix64
from .tensorio import read_ppm, write_ppm

GRATING_COUNT_RANGE = (2, 4)
FREQ_RANGE = (0.05, 0.45)        # cycles per pixel
AMPLITUDE_RANGE = (0.05, 0.25)
GAMMA_RANGE = (0.8, 1.25)


@dataclass(frozen=True)
class MoireParams:
    """Grating parameters for one degraded image."""

    frequencies: np.ndarray       # cycles/pixel, one per grating
    orientations: np.ndarray      # radians
    amplitudes: np.ndarray
    phases: np.ndarray            # [gratings, 3] per-RGB-channel offsets
    gamma: float

    @classmethod
    def sample(cls, seed: int) -> "MoireParams":
        rng = Xoshiro256(splitmix64(seed, 23))
        count = GRATING_COUNT_RANGE[0] + rng.below(
            GRATING_COUNT_RANGE[1] - GRATING_COUNT_RANGE[0] + 1)
        freqs, orients, amps, phases = [], [], [], []
        for _ in range(count):
            freqs.append(rng.uniform(*FREQ_RANGE))
            orients.append(rng.uniform(0.0, math.pi))
            amps.append(rng.uniform(*AMPLITUDE_RANGE))
            phases.append([rng.uniform(0.0, 2.0 * math.pi) for _ in range(3)])
        gamma = rng.uniform(*GAMMA_RANGE)
        return cls(frequencies=np.array(freqs), orientations=np.array(orients),
                   amplitudes=np.array(amps), phases=np.array(phases), gamma=gamma)


def gen_clean(seed: int, h: int, w: int) -> np.ndarray:
    """Smooth random [1, 3, H, W] image in [0, 1]."""
    if h < 16 or w < 16:
        raise ValueError(f"image must be at least 16x16, got {h}x{w}")
    rng = Xoshiro256(splitmix64(seed, 17))
    yy = (np.arange(h, dtype=np.float64) / (h - 1) - 0.5)[:, None]
    xx = (np.arange(w, dtype=np.float64) / (w - 1) - 0.5)[None, :]
    img = np.empty((3, h, w), dtype=np.float64)
    for c in range(3):
        base = rng.uniform(0.25, 0.75)
        gx = rng.uniform(-0.2, 0.2)
        gy = rng.uniform(-0.2, 0.2)
        img[c] = base + gx * xx + gy * yy
    side = min(h, w)
    for _ in range(4):
        cy = rng.uniform(0.0, h - 1.0)
        cx = rng.uniform(0.0, w - 1.0)
        sigma = rng.uniform(0.15, 0.45) * side
        amps = [rng.uniform(-0.3, 0.3) for _ in range(3)]
        d2 = ((np.arange(h, dtype=np.float64) - cy)[:, None] ** 2
              + (np.arange(w, dtype=np.float64) - cx)[None, :] ** 2)
        blob = np.exp(-d2 / (2.0 * sigma * sigma))
        for c in range(3):
            img[c] += amps[c] * blob
    return np.clip(img, 0.0, 1.0).astype(np.float32)[None]


def gen_moire(clean: np.ndarray, seed: int,
              params: MoireParams | None = None) -> np.ndarray:
    """Overlay colored sinusoidal gratings on a gamma-warped base."""
    clean = np.asarray(clean, dtype=np.float32)
    if clean.ndim != 4 or clean.shape[1] != 3:
        raise ValueError(f"expected [1, 3, H, W] image, got {clean.shape}")
    if params is None:
        params = MoireParams.sample(seed)
    h, w = clean.shape[2], clean.shape[3]
    base = clean.astype(np.float64)
    if params.gamma != 1.0:
        base = np.power(base, params.gamma)
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    pattern = np.zeros((3, h, w), dtype=np.float64)
    for g in range(params.frequencies.shape[0]):
        f = params.frequencies[g]
        theta = params.orientations[g]
        amp = params.amplitudes[g]
        carrier = 2.0 * math.pi * f * (xx * math.cos(theta) + yy * math.sin(theta))
        for c in range(3):
            pattern[c] += amp * np.sin(carrier + params.phases[g, c])
    return np.clip(base + pattern[None], 0.0, 1.0).astype(np.float32)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; inf when equal."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    for name, img in (("a", a), ("b", b)):
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError(f"{name} has values outside [0, 1]")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03

_LUMA = np.array([0.299, 0.587, 0.114])


def _gaussian_window() -> np.ndarray:
    r = np.arange(_SSIM_WINDOW, dtype=np.float64) - (_SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _correlate_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    h, w = img.shape
    out = np.zeros((h - k + 1, w - k + 1), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out += win[i, j] * img[i:i + h - k + 1, j:j + w - k + 1]
    return out


def _to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 4:
        img = img[0]
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected [1, 3, H, W] or [3, H, W], got {img.shape}")
    return np.tensordot(_LUMA, img, axes=1)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity on luma, 11x11 Gaussian window, valid region."""
    ya = _to_luma(a)
    yb = _to_luma(b)
    if ya.shape != yb.shape:
        raise ValueError(f"shape mismatch: {ya.shape} vs {yb.shape}")
    if min(ya.shape) < _SSIM_WINDOW:
        raise ValueError(f"image {ya.shape} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    win = _gaussian_window()
    mu1 = _correlate_valid(ya, win)
    mu2 = _correlate_valid(yb, win)
    s11 = _correlate_valid(ya * ya, win) - mu1 * mu1
    s22 = _correlate_valid(yb * yb, win) - mu2 * mu2
    s12 = _correlate_valid(ya * yb, win) - mu1 * mu2
    c1 = (_SSIM_K1 * 1.0) ** 2
    c2 = (_SSIM_K2 * 1.0) ** 2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class ManifestEntry:
    split: str
    clean_path: str
    moire_path: str
    seed: int


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    entries: tuple[ManifestEntry, ...]

    def split(self, tag: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == tag]


MANIFEST_NAME = "manifest.txt"


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(f"{e.split}\t{e.clean_path}\t{e.moire_path}\t{e.seed:016x}\n")


def read_manifest(path) -> DatasetManifest:
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            split, clean_path, moire_path, seed_hex = line.split("\t")
            entries.append(ManifestEntry(split, clean_path, moire_path,
                                         int(seed_hex, 16)))
    return DatasetManifest(root=root, entries=tuple(entries))


def gen_dataset(seed: int, counts: dict[str, int], h: int, w: int,
                out_dir) -> DatasetManifest:
    """Write PPM pairs for the train/calib/test splits plus a manifest.

    Per-image seeds come from the splitmix64 stream of the global seed
    (one output per global image index), so any image can be regenerated
    from its manifest line alone.
    """
    out_dir = os.path.abspath(out_dir)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    entries = []
    index = 0
    for split in ("train", "calib", "test"):
        for k in range(counts.get(split, 0)):
            img_seed = splitmix64(seed, index)
            index += 1
            clean = gen_clean(img_seed, h, w)
            moire = gen_moire(clean, img_seed)
            clean_rel = os.path.join("images", f"{split}_{k:04d}_clean.ppm")
            moire_rel = os.path.join("images", f"{split}_{k:04d}_moire.ppm")
            write_ppm(clean, os.path.join(out_dir, clean_rel))
            write_ppm(moire, os.path.join(out_dir, moire_rel))
            entries.append(ManifestEntry(split, clean_rel, moire_rel, img_seed))
    manifest = DatasetManifest(root=out_dir, entries=tuple(entries))
    write_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
    return manifest


def load_pairs(manifest: DatasetManifest, split: str):
    """(degraded, clean) float32 tensors for one split, in manifest order."""
    pairs = []
    for e in manifest.split(split):
        clean = read_ppm(os.path.join(manifest.root, e.clean_path))
        moire = read_ppm(os.path.join(manifest.root, e.moire_path))
        pairs.append((moire, clean))
    return pairs
