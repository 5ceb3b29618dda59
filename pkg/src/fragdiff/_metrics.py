"""Frame-quality metrics over [-1, 1] videos: PSNR and windowed SSIM."""

from __future__ import annotations

import numpy as np

__all__ = ["psnr", "ssim"]

_PSNR_CAP = 99.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


def _to_unit(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 3:
        frames = frames[None]
    if frames.ndim != 4:
        raise ValueError(f"expected [F, C, H, W] frames, got shape {frames.shape}")
    return (frames + 1.0) / 2.0


def _paired(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = _to_unit(pred), _to_unit(truth)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-frame PSNR on the [0, 1] scale, capped at 99 dB, plus the mean."""
    a, b = _paired(pred, truth)
    mse = ((a - b) ** 2).mean(axis=(1, 2, 3))
    with np.errstate(divide="ignore"):
        vals = np.where(mse > 0, 10.0 * np.log10(1.0 / np.maximum(mse, 1e-300)), np.inf)
    vals = np.minimum(vals, _PSNR_CAP)
    return vals, float(vals.mean())


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # img [F, H, W] -> weighted local means over valid windows
    k = window.shape[0]
    views = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(1, 2))
    return np.tensordot(views, window, axes=([3, 4], [0, 1]))


def ssim(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-frame SSIM with an 11x11 Gaussian window (sigma 1.5), plus the mean.

    Frames are converted to grayscale by channel averaging; the dynamic
    range is 1 on the rescaled [0, 1] values.
    """
    a, b = _paired(pred, truth)
    if a.shape[2] < _SSIM_WINDOW or a.shape[3] < _SSIM_WINDOW:
        raise ValueError(
            f"frames {a.shape[2]}x{a.shape[3]} are smaller than the "
            f"{_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window"
        )
    ga = a.mean(axis=1)
    gb = b.mean(axis=1)
    window = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_a = _windowed_mean(ga, window)
    mu_b = _windowed_mean(gb, window)
    var_a = _windowed_mean(ga * ga, window) - mu_a**2
    var_b = _windowed_mean(gb * gb, window) - mu_b**2
    cov = _windowed_mean(ga * gb, window) - mu_a * mu_b
    c1 = _K1**2
    c2 = _K2**2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    smap = num / den
    vals = smap.mean(axis=(1, 2))
    return vals, float(vals.mean())
