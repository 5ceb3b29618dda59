"""Input validation helpers for the public estimator surface."""

from __future__ import annotations

import numpy as np

__all__ = ["check_clips", "check_frame_stack"]

_RANGE_SLACK = 1e-6


def _as_float_video(X, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < -1.0 - _RANGE_SLACK or hi > 1.0 + _RANGE_SLACK:
        raise ValueError(f"{name} values must lie in [-1, 1], got [{lo:.3g}, {hi:.3g}]")
    return np.clip(arr, -1.0, 1.0)


def check_clips(
    X, min_length: int, channels: int, frame_size: int | None = None
) -> np.ndarray:
    """Validate a batch of clips as [n, L, C, H, W] float32 in [-1, 1]."""
    arr = _as_float_video(X, "clips", 5)
    n, length, c, h, w = arr.shape
    if n < 1:
        raise ValueError("need at least one clip")
    if length < min_length:
        raise ValueError(f"clips of {length} frames are shorter than {min_length}")
    if c != channels:
        raise ValueError(f"expected {channels} channels, got {c}")
    if h != w:
        raise ValueError(f"frames must be square, got {h}x{w}")
    if frame_size is not None and h != frame_size:
        raise ValueError(f"expected {frame_size}x{frame_size} frames, got {h}x{w}")
    return arr


def check_frame_stack(
    X, frames: int, channels: int, frame_size: int, name: str = "frames"
) -> np.ndarray:
    """Validate [n, frames, C, H, W] (or a single unbatched stack) inputs."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 4:
        arr = arr[None]
    arr = _as_float_video(arr, name, 5)
    if arr.shape[1] != frames:
        raise ValueError(f"{name} must hold {frames} frames per sample, got {arr.shape[1]}")
    if arr.shape[2] != channels:
        raise ValueError(f"{name} must have {channels} channels, got {arr.shape[2]}")
    if arr.shape[3] != frame_size or arr.shape[4] != frame_size:
        raise ValueError(
            f"{name} must be {frame_size}x{frame_size}, got {arr.shape[3]}x{arr.shape[4]}"
        )
    return arr
