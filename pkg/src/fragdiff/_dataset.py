"""Synthetic clips of bouncing squares for desk-scale training runs.

Squares move with constant integer velocity and reflect elastically at
the frame edges, so the dynamics are fully determined by the first
frames.  Background is -1; square colors stay well above it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ObjectTrack", "SyntheticClip", "generate_dataset"]

_MIN_OBJ = 3
_MAX_OBJ = 5
_BACKGROUND = -1.0
_SPEEDS = (-1, 1)


@dataclass(frozen=True)
class ObjectTrack:
    """One square: per-frame integer positions plus static attributes."""

    size: int
    color: np.ndarray  # [3] in (-1, 1]
    velocity: tuple[int, int]  # initial (vy, vx)
    positions: np.ndarray  # [L, 2] top-left (y, x) per frame


@dataclass(frozen=True)
class SyntheticClip:
    frames: np.ndarray  # [L, 3, H, W] float32 in [-1, 1]
    objects: tuple[ObjectTrack, ...]


def _bounce(pos: int, vel: int, low: int, high: int) -> tuple[int, int]:
    pos += vel
    if pos < low:
        return 2 * low - pos, -vel
    if pos > high:
        return 2 * high - pos, -vel
    return pos, vel


def _render(tracks, length: int, size: int) -> np.ndarray:
    frames = np.full((length, 3, size, size), _BACKGROUND, dtype=np.float32)
    for track in tracks:
        s = track.size
        for t in range(length):
            y, x = track.positions[t]
            frames[t, :, y : y + s, x : x + s] = track.color[:, None, None]
    return frames


def generate_dataset(
    count: int,
    length: int,
    size: int,
    seed: int,
    min_objects: int = 1,
    max_objects: int = 2,
) -> list[SyntheticClip]:
    """Deterministically generate ``count`` clips of bouncing squares."""
    if count < 1 or length < 1:
        raise ValueError("count and length must be >= 1")
    if size < 2 * _MAX_OBJ:
        raise ValueError(
            f"frame size {size} too small: objects up to {_MAX_OBJ} px need "
            f"at least {2 * _MAX_OBJ} px of room"
        )
    if not 1 <= min_objects <= max_objects:
        raise ValueError("need 1 <= min_objects <= max_objects")
    rng = np.random.default_rng(seed)
    clips = []
    for _ in range(count):
        n_objects = int(rng.integers(min_objects, max_objects + 1))
        tracks = []
        for _ in range(n_objects):
            obj_size = int(rng.integers(_MIN_OBJ, _MAX_OBJ + 1))
            high = size - obj_size
            y, x = int(rng.integers(0, high + 1)), int(rng.integers(0, high + 1))
            vy, vx = (int(rng.choice(_SPEEDS)), int(rng.choice(_SPEEDS)))
            velocity = (vy, vx)
            color = rng.uniform(-0.2, 1.0, size=3).astype(np.float32)
            positions = np.empty((length, 2), dtype=np.int64)
            for t in range(length):
                positions[t] = (y, x)
                y, vy = _bounce(y, vy, 0, high)
                x, vx = _bounce(x, vx, 0, high)
            tracks.append(
                ObjectTrack(
                    size=obj_size, color=color, velocity=velocity, positions=positions
                )
            )
        clips.append(SyntheticClip(frames=_render(tracks, length, size), objects=tuple(tracks)))
    return clips
