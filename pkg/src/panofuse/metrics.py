"""PSNR and single-scale SSIM on [0, 1] float images."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

__all__ = ["MetricReport", "psnr", "ssim", "evaluate", "PSNR_TEXT_CAP"]

PSNR_TEXT_CAP = 99.0

_K1 = 0.01
_K2 = 0.03
_WIN = 11
_SIGMA = 1.5


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    n_pixels: int

    def to_dict(self) -> dict:
        return {
            "psnr": min(self.psnr, PSNR_TEXT_CAP),
            "ssim": self.ssim,
            "n_pixels": self.n_pixels,
        }


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, mask=None) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range.

    ``mask`` selects the pixels (leading image axes) to compare. Identical
    inputs give ``inf``.
    """
    a, b = _check_pair(a, b)
    if mask is None:
        diff = a - b
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape[: mask.ndim]:
            raise ValueError(f"mask shape {mask.shape} does not match image {a.shape}")
        diff = a[mask] - b[mask]
    if diff.size == 0:
        raise ValueError("no pixels to compare")
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window() -> np.ndarray:
    x = np.arange(_WIN) - (_WIN - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * _SIGMA * _SIGMA))
    return w / w.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # separable correlation, then keep only positions where the window fits
    out = correlate1d(img, win, axis=0, mode="constant")
    out = correlate1d(out, win, axis=1, mode="constant")
    r = (_WIN - 1) // 2
    return out[r:-r, r:-r]


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if min(a.shape[:2]) < _WIN:
        raise ValueError(f"images must be at least {_WIN}x{_WIN} for SSIM, got {a.shape[:2]}")
    c1 = (_K1 * 1.0) ** 2
    c2 = (_K2 * 1.0) ** 2
    win = _gaussian_window()
    scores = []
    for ch in range(a.shape[2]):
        x = a[..., ch]
        y = b[..., ch]
        mx = _filter_valid(x, win)
        my = _filter_valid(y, win)
        vx = _filter_valid(x * x, win) - mx * mx
        vy = _filter_valid(y * y, win) - my * my
        cxy = _filter_valid(x * y, win) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def evaluate(a, b, mask=None) -> MetricReport:
    """PSNR (optionally masked) and full-image SSIM of ``a`` against ``b``."""
    a, b = _check_pair(a, b)
    n = int(a.shape[0] * a.shape[1]) if mask is None else int(np.asarray(mask, dtype=bool).sum())
    return MetricReport(psnr(a, b, mask), ssim(a, b), n)
