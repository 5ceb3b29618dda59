"""On-disk formats: PPM frame directories and the binary checkpoint archive.

Frames live in [-1, 1] inside the engine and are quantized to 8-bit with
round-half-up on save.  A frame directory holds frame_0000.ppm .. plus a
manifest.json.  Checkpoints are a little-endian named-tensor archive.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = [
    "CheckpointError",
    "FrameFormatError",
    "dequantize",
    "load_checkpoint",
    "load_frames",
    "quantize",
    "save_checkpoint",
    "save_frames",
]

_MAGIC = b"LGCV"
_VERSION = 1


class FrameFormatError(ValueError):
    """Raised for malformed frame files or manifests."""


class CheckpointError(ValueError):
    """Raised for malformed or mismatched checkpoint files."""


def quantize(frames: np.ndarray) -> np.ndarray:
    """[-1, 1] floats -> uint8, round half up."""
    frames = np.asarray(frames, dtype=np.float64)
    return np.clip(np.floor((frames + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def dequantize(bytes_: np.ndarray) -> np.ndarray:
    """uint8 -> [-1, 1] float32 (error at most 1/255)."""
    return (np.asarray(bytes_, dtype=np.float32) * (2.0 / 255.0) - 1.0).astype(np.float32)


def _frame_name(index: int) -> str:
    return f"frame_{index:04d}.ppm"


def save_frames(frames: np.ndarray, directory) -> None:
    """Write [F, 3, H, W] floats in [-1, 1] as binary PPMs plus a manifest."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise FrameFormatError(f"expected [F, 3, H, W] frames, got {frames.shape}")
    f, _, h, w = frames.shape
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = quantize(frames).transpose(0, 2, 3, 1)  # [F, H, W, 3]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    for i in range(f):
        (directory / _frame_name(i)).write_bytes(header + data[i].tobytes())
    manifest = {"frames": f, "height": h, "width": w, "channels": "rgb"}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _read_ppm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if not raw.startswith(b"P6"):
        raise FrameFormatError(f"{path.name}: not a binary PPM (P6) file")
    # header: magic, width, height, maxval; separated by whitespace, with
    # optional # comments; pixel data starts after the single whitespace
    # byte that follows maxval
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FrameFormatError(f"{path.name}: truncated header")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError as exc:
            raise FrameFormatError(f"{path.name}: bad header token") from exc
    pos += 1  # the single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FrameFormatError(f"{path.name}: maxval must be 255, got {maxval}")
    expected = w * h * 3
    pixels = raw[pos : pos + expected]
    if len(pixels) != expected:
        raise FrameFormatError(f"{path.name}: expected {expected} pixel bytes")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)


def load_frames(directory) -> np.ndarray:
    """Read a frame directory back to [F, 3, H, W] float32 in [-1, 1]."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FrameFormatError(f"{directory}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    for key in ("frames", "height", "width", "channels"):
        if key not in manifest:
            raise FrameFormatError(f"{directory}: manifest missing {key!r}")
    if manifest["channels"] != "rgb":
        raise FrameFormatError(f"{directory}: unsupported channels {manifest['channels']!r}")
    f, h, w = manifest["frames"], manifest["height"], manifest["width"]
    frames = np.empty((f, h, w, 3), dtype=np.uint8)
    for i in range(f):
        path = directory / _frame_name(i)
        if not path.exists():
            raise FrameFormatError(f"{directory}: missing {path.name}")
        img = _read_ppm(path)
        if img.shape != (h, w, 3):
            raise FrameFormatError(
                f"{path.name}: size {img.shape[1]}x{img.shape[0]} does not match manifest"
            )
        frames[i] = img
    return dequantize(frames.transpose(0, 3, 1, 2))


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named float32 tensors: magic, version, count, then entries.

    Entries are sorted by name so identical states produce identical bytes.
    Each entry is name length (u16) + UTF-8 name, rank (u8), dims (u32
    each), then raw little-endian float32 data.
    """
    names = sorted(tensors)
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(names))]
    for name in names:
        # asarray, not ascontiguousarray: the latter promotes rank 0 to
        # rank 1, and tobytes() copies in C order regardless of layout.
        data = np.asarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        if data.ndim > 0xFF:
            raise CheckpointError(f"tensor rank too large: {data.ndim}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, expected: Mapping[str, tuple] | None = None) -> dict[str, np.ndarray]:
    """Read a checkpoint archive; optionally validate names and shapes.

    With ``expected`` given, the file must contain exactly those names
    with exactly those shapes.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise CheckpointError(f"{path}: file shorter than the 12-byte header")
    if raw[:4] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack("<II", raw[4:12])
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        if pos + 2 > len(raw):
            raise CheckpointError(f"{path}: truncated at tensor name length")
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if pos + name_len + 1 > len(raw):
            raise CheckpointError(f"{path}: truncated inside a tensor header")
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rank = raw[pos]
        pos += 1
        if pos + 4 * rank > len(raw):
            raise CheckpointError(f"{path}: truncated inside dims of {name!r}")
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = 4 * size
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated inside data of {name!r}")
        data = np.frombuffer(raw[pos : pos + nbytes], dtype="<f4").reshape(dims)
        pos += nbytes
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = data.copy()
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    if expected is not None:
        missing = sorted(set(expected) - set(tensors))
        unknown = sorted(set(tensors) - set(expected))
        if missing or unknown:
            raise CheckpointError(
                f"{path}: tensor names do not match the model "
                f"(missing {missing[:3]}, unknown {unknown[:3]})"
            )
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != tuple(shape):
                raise CheckpointError(
                    f"{path}: {name!r} has shape {tensors[name].shape}, wanted {tuple(shape)}"
                )
    return tensors
