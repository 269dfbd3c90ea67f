"""Spike maps, 8-bit images, bit planes and block tiling.

Arrays are laid out row-major as ``(t, c, row, col)`` for spikes and
``(c, row, col)`` for multibit images.  Spike data is stored as ``uint8``
holding only 0/1.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

TILE_H = 18
TILE_W = 32
N_BITS = 8


class FormatError(ValueError):
    """Raised when a file or encoded object is malformed."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpikeTensor:
    """Binary activation map of shape (T, C, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4:
            raise ValueError(f"spike tensor must be 4-d (T, C, H, W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all spike tensor dims must be positive, got {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError("spike tensor holds values other than 0/1")
        object.__setattr__(self, "data", _frozen(arr.astype(np.uint8, copy=True)))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, t, c, h, w) -> "SpikeTensor":
        return cls(np.zeros((t, c, h, w), dtype=np.uint8))

    def density(self) -> float:
        return float(self.data.mean())


@dataclass(frozen=True)
class MultibitTensor:
    """8-bit unsigned image of shape (C, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"multibit tensor must be 3-d (C, H, W) with positive dims, got {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("multibit tensor values must lie in [0, 255]")
        object.__setattr__(self, "data", _frozen(arr.astype(np.uint8, copy=True)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Tile:
    """A block of the parent map: origin plus extent (at most 18 x 32)."""

    row: int
    col: int
    height: int
    width: int

    @property
    def size(self) -> int:
        return self.height * self.width

    def slices(self) -> tuple[slice, slice]:
        return (slice(self.row, self.row + self.height),
                slice(self.col, self.col + self.width))

    def view(self, arr: np.ndarray) -> np.ndarray:
        """Select this tile from the two trailing axes of ``arr``."""
        rs, cs = self.slices()
        return arr[..., rs, cs]


def bit_plane_split(img) -> np.ndarray:
    """Split an 8-bit image into planes, least significant first.

    Returns an array of shape ``(8, *img.shape)``; plane ``b`` holds bit ``b``.
    """
    data = img.data if isinstance(img, MultibitTensor) else np.asarray(img)
    if data.size and (data.min() < 0 or data.max() > 255):
        raise ValueError("bit_plane_split expects values in [0, 255]")
    data = data.astype(np.uint8)
    return np.stack([(data >> b) & 1 for b in range(N_BITS)]).astype(np.uint8)


def bit_plane_merge(planes: np.ndarray) -> np.ndarray:
    weights = (1 << np.arange(planes.shape[0], dtype=np.int64)).reshape((-1,) + (1,) * (planes.ndim - 1))
    return (planes.astype(np.int64) * weights).sum(axis=0)


def tile_partition(shape_or_map, tile_h: int = TILE_H, tile_w: int = TILE_W) -> list[Tile]:
    """Cover an ``H x W`` map with non-overlapping tiles in row-major grid order.

    ``shape_or_map`` is either a ``(H, W)`` pair or any array/tensor whose two
    trailing axes are rows and columns.  Edge tiles shrink when the map size is
    not a multiple of the tile size.
    """
    if isinstance(shape_or_map, (SpikeTensor, MultibitTensor)):
        h, w = shape_or_map.shape[-2:]
    elif isinstance(shape_or_map, np.ndarray):
        h, w = shape_or_map.shape[-2:]
    else:
        h, w = shape_or_map
    if h < 1 or w < 1 or tile_h < 1 or tile_w < 1:
        raise ValueError("map and tile dims must be positive")
    return [Tile(r, c, min(tile_h, h - r), min(tile_w, w - c))
            for r in range(0, h, tile_h)
            for c in range(0, w, tile_w)]


def replicate_pad(tile: np.ndarray, pad: int) -> np.ndarray:
    """Pad the two trailing axes by copying the nearest edge value."""
    if pad < 0:
        raise ValueError("pad must be >= 0")
    if pad == 0:
        return np.array(tile, copy=True)
    widths = [(0, 0)] * (tile.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(tile, widths, mode="edge")


# --- SNNT tensor files -------------------------------------------------------

TENSOR_MAGIC = b"SNNT"
KIND_SPIKE = 0
KIND_U8 = 1
KIND_I32 = 2  # signed potentials from the output layer
_HEADER = struct.Struct("<4sB4IB")


def atomic_write(path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(arr, kind: int | None = None) -> bytes:
    if isinstance(arr, (SpikeTensor, MultibitTensor)):
        if kind is None:
            kind = KIND_SPIKE if isinstance(arr, SpikeTensor) else KIND_U8
        arr = arr.data
    arr = np.asarray(arr)
    if not 1 <= arr.ndim <= 4:
        raise ValueError("tensor rank must be 1..4")
    if kind is None:
        kind = KIND_I32
    dims = list(arr.shape) + [0] * (4 - arr.ndim)
    header = _HEADER.pack(TENSOR_MAGIC, arr.ndim, *dims, kind)
    if kind == KIND_SPIKE:
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError("spike payload must be binary")
        # packbits pads every row (last axis) to a whole byte
        payload = np.packbits(arr.astype(np.uint8), axis=-1).tobytes()
    elif kind == KIND_U8:
        payload = arr.astype("<u1").tobytes()
    elif kind == KIND_I32:
        payload = arr.astype("<i4").tobytes()
    else:
        raise ValueError(f"unknown element kind {kind}")
    return header + payload


def decode_tensor(buf: bytes) -> tuple[np.ndarray, int]:
    """Parse an SNNT blob into ``(array, kind)``."""
    if len(buf) < _HEADER.size:
        raise FormatError("truncated tensor header")
    magic, rank, d0, d1, d2, d3, kind = _HEADER.unpack_from(buf)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    if not 1 <= rank <= 4:
        raise FormatError(f"bad tensor rank {rank}")
    dims = (d0, d1, d2, d3)
    if any(d == 0 for d in dims[:rank]) or any(d != 0 for d in dims[rank:]):
        raise FormatError(f"inconsistent tensor dims {dims} for rank {rank}")
    shape = dims[:rank]
    body = buf[_HEADER.size:]
    if kind == KIND_SPIKE:
        row_bytes = (shape[-1] + 7) // 8
        expected = int(np.prod(shape[:-1], dtype=np.int64)) * row_bytes
        if len(body) != expected:
            raise FormatError(f"spike payload has {len(body)} bytes, expected {expected}")
        packed = np.frombuffer(body, dtype=np.uint8).reshape(shape[:-1] + (row_bytes,))
        return np.unpackbits(packed, axis=-1, count=shape[-1]), kind
    itemsize = {KIND_U8: 1, KIND_I32: 4}.get(kind)
    if itemsize is None:
        raise FormatError(f"unknown element kind {kind}")
    expected = int(np.prod(shape, dtype=np.int64)) * itemsize
    if len(body) != expected:
        raise FormatError(f"payload has {len(body)} bytes, expected {expected}")
    dtype = "<u1" if kind == KIND_U8 else "<i4"
    return np.frombuffer(body, dtype=dtype).reshape(shape).copy(), kind


def write_tensor(path, arr, kind: int | None = None) -> None:
    atomic_write(path, encode_tensor(arr, kind))


def read_tensor(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
