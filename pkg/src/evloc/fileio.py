"""Binary containers: snippet-feature files and parameter checkpoints.

Feature file layout (little endian):

    bytes 0-3    magic "GUEF"
    bytes 4-7    u32 version (1)
    bytes 8-11   u32 channel count D
    bytes 12-15  u32 snippet count W
    bytes 16-19  u32 dtype code (0 = 32-bit float)
    bytes 20-    D * W float32 payload, row major

Checkpoint layout (little endian):

    bytes 0-3    magic "EVCK"
    bytes 4-7    u32 version (1)
    bytes 8-19   u32 num_classes, u32 feature_dim, u32 heads
    bytes 20-23  u32 tensor count
    per tensor:  u16 name length, utf-8 name, u8 ndim,
                 u32 dims[ndim], float64 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .validation import require

__all__ = [
    "FeatureFormatError",
    "BadMagicError",
    "TruncatedPayloadError",
    "ShapeOverflowError",
    "CheckpointFormatError",
    "write_features",
    "read_features",
    "write_checkpoint",
    "read_checkpoint",
    "FEATURE_MAGIC",
    "CHECKPOINT_MAGIC",
]

FEATURE_MAGIC = b"GUEF"
FEATURE_VERSION = 1
FEATURE_DTYPE_F32 = 0
CHECKPOINT_MAGIC = b"EVCK"
CHECKPOINT_VERSION = 1

# Largest element count a header may declare before allocation is refused.
MAX_FEATURE_ELEMENTS = 1 << 28


class FeatureFormatError(ValueError):
    """A feature file violates the documented layout."""


class BadMagicError(FeatureFormatError):
    """The file does not start with the expected magic bytes."""


class TruncatedPayloadError(FeatureFormatError):
    """The payload does not match the size promised by the header."""


class ShapeOverflowError(FeatureFormatError):
    """The header declares a shape too large to be trusted."""


class CheckpointFormatError(ValueError):
    """A checkpoint file violates the documented layout."""


def write_features(path, features) -> None:
    """Write a (D, W) feature matrix as a float32 container."""
    arr = np.asarray(features, dtype=np.float64)
    require(arr.ndim == 2, f"features must be 2-dimensional, got shape {arr.shape}")
    require(bool(np.isfinite(arr).all()), "features must be finite")
    d, w = arr.shape
    if d * w > MAX_FEATURE_ELEMENTS:
        raise ShapeOverflowError(
            f"shape ({d}, {w}) exceeds the {MAX_FEATURE_ELEMENTS} element limit")
    header = struct.pack("<4s4I", FEATURE_MAGIC, FEATURE_VERSION, d, w, FEATURE_DTYPE_F32)
    payload = arr.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_features(path) -> np.ndarray:
    """Read a feature container back as a float64 (D, W) matrix."""
    raw = Path(path).read_bytes()
    if len(raw) < 20:
        raise TruncatedPayloadError(f"file is only {len(raw)} bytes, header needs 20")
    magic, version, d, w, dtype = struct.unpack("<4s4I", raw[:20])
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"unsupported version {version}")
    if dtype != FEATURE_DTYPE_F32:
        raise FeatureFormatError(f"unsupported dtype code {dtype}")
    if d * w > MAX_FEATURE_ELEMENTS:
        raise ShapeOverflowError(
            f"header declares shape ({d}, {w}); refusing to allocate")
    expected = d * w * 4
    if len(raw) - 20 != expected:
        raise TruncatedPayloadError(
            f"payload holds {len(raw) - 20} bytes, header promises {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=20).reshape(d, w)
    return values.astype(np.float64)


def write_checkpoint(path, num_classes: int, feature_dim: int, heads: int,
                     tensors: dict[str, np.ndarray]) -> None:
    """Write named float64 parameter tensors with their model dimensions."""
    parts = [struct.pack("<4s5I", CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                         num_classes, feature_dim, heads, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        require(len(encoded) < 1 << 16, f"tensor name too long: {name!r}")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[int, int, int, dict[str, np.ndarray]]:
    """Read a checkpoint, returning (num_classes, feature_dim, heads, tensors)."""
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise CheckpointFormatError(f"file is only {len(raw)} bytes, header needs 24")
    magic, version, num_classes, feature_dim, heads, count = struct.unpack(
        "<4s5I", raw[:24])
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(
            f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    offset = 24
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if size > MAX_FEATURE_ELEMENTS:
                raise CheckpointFormatError(
                    f"tensor {name!r} declares {size} elements; refusing to allocate")
            end = offset + 8 * size
            if end > len(raw):
                raise CheckpointFormatError(
                    f"tensor {name!r} payload runs past the end of the file")
            tensors[name] = np.frombuffer(
                raw, dtype="<f8", count=size, offset=offset).reshape(shape).copy()
            offset = end
        except struct.error as exc:
            raise CheckpointFormatError(f"truncated tensor table: {exc}") from exc
    if offset != len(raw):
        raise CheckpointFormatError(
            f"{len(raw) - offset} trailing bytes after the tensor table")
    return num_classes, feature_dim, heads, tensors
