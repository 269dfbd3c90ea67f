"""Fine-grained pruning, 8-bit quantization and sparse kernel codecs.

A layer's weights are an ``(out_C, in_C, k, k)`` integer array.  Individual
kernels can be stored dense, as a bit-mask (occupancy bits plus the nonzero
values in row-major order) or as CSR.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .tensor import FormatError, atomic_write

KERNEL_SIZES = (1, 3)
FORMATS = ("dense", "bitmask", "csr")
WEIGHT_BITS = 8
Q_MAX = 127


class CorruptKernelError(FormatError):
    pass


@dataclass(frozen=True)
class BitmaskKernel:
    """``mask`` has k*k bits; the most significant bit is position (0, 0)."""

    k: int
    mask: int
    values: tuple[int, ...]

    @property
    def nnz(self) -> int:
        return len(self.values)

    def positions(self) -> list[tuple[int, int]]:
        """Nonzero (row, col) positions, leftmost-first within each row."""
        n = self.k * self.k
        return [divmod(i, self.k) for i in range(n) if self.mask >> (n - 1 - i) & 1]

    def nonzeros(self):
        return zip(self.positions(), self.values)


@dataclass(frozen=True)
class CsrKernel:
    k: int
    row_ptr: tuple[int, ...]
    col_idx: tuple[int, ...]
    values: tuple[int, ...]

    @property
    def nnz(self) -> int:
        return len(self.values)


def _check_kernel(kernel) -> np.ndarray:
    kernel = np.asarray(kernel)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"kernel must be square, got shape {kernel.shape}")
    return kernel


def encode_bitmask(kernel) -> BitmaskKernel:
    kernel = _check_kernel(kernel)
    k = kernel.shape[0]
    flat = kernel.reshape(-1)
    mask = 0
    for v in flat:
        mask = (mask << 1) | int(v != 0)
    return BitmaskKernel(k, mask, tuple(int(v) for v in flat if v != 0))


def decode_bitmask(bk: BitmaskKernel) -> np.ndarray:
    n = bk.k * bk.k
    if bk.mask < 0 or bk.mask >> n:
        raise CorruptKernelError(f"mask {bk.mask:#x} has bits beyond {n} positions")
    if bin(bk.mask).count("1") != len(bk.values):
        raise CorruptKernelError(
            f"mask popcount {bin(bk.mask).count('1')} != {len(bk.values)} stored values")
    if any(v == 0 for v in bk.values):
        raise CorruptKernelError("bit-mask kernel stores an explicit zero")
    out = np.zeros(n, dtype=np.int64)
    out[[i for i in range(n) if bk.mask >> (n - 1 - i) & 1]] = bk.values
    return out.reshape(bk.k, bk.k)


def encode_csr(kernel) -> CsrKernel:
    kernel = _check_kernel(kernel)
    k = kernel.shape[0]
    row_ptr, col_idx, values = [0], [], []
    for r in range(k):
        for c in range(k):
            if kernel[r, c] != 0:
                col_idx.append(c)
                values.append(int(kernel[r, c]))
        row_ptr.append(len(values))
    return CsrKernel(k, tuple(row_ptr), tuple(col_idx), tuple(values))


def decode_csr(ck: CsrKernel) -> np.ndarray:
    k = ck.k
    rp = ck.row_ptr
    if len(rp) != k + 1 or rp[0] != 0 or any(b < a for a, b in zip(rp, rp[1:])):
        raise CorruptKernelError(f"malformed row_ptr {rp}")
    if rp[-1] != len(ck.values) or len(ck.col_idx) != len(ck.values):
        raise CorruptKernelError("row_ptr / col_idx / values lengths disagree")
    if any(not 0 <= c < k for c in ck.col_idx):
        raise CorruptKernelError(f"column index out of range in {ck.col_idx}")
    out = np.zeros((k, k), dtype=np.int64)
    for r in range(k):
        cols = ck.col_idx[rp[r]:rp[r + 1]]
        if len(set(cols)) != len(cols):
            raise CorruptKernelError(f"duplicate column index in row {r}")
        out[r, list(cols)] = ck.values[rp[r]:rp[r + 1]]
    return out


# --- storage accounting ------------------------------------------------------

def csr_field_bits(k: int) -> tuple[int, int]:
    """Minimal (row-pointer, column-index) widths for a k x k kernel."""
    return math.ceil(math.log2(k * k + 1)), math.ceil(math.log2(k)) if k > 1 else 0


def kernel_storage_bits(k: int, nnz: int, fmt: str) -> int:
    if fmt == "dense":
        return WEIGHT_BITS * k * k
    if fmt == "bitmask":
        return k * k + WEIGHT_BITS * nnz
    if fmt == "csr":
        ptr_bits, idx_bits = csr_field_bits(k)
        return (k + 1) * ptr_bits + nnz * (idx_bits + WEIGHT_BITS)
    raise ValueError(f"unknown format {fmt!r}")


def storage_bits(weights, fmt: str) -> int:
    """Total bits to store a ``(out_C, in_C, k, k)`` layer in ``fmt``."""
    w = np.asarray(weights)
    if w.ndim == 2:
        w = w[None, None]
    k = w.shape[-1]
    n_kernels = int(np.prod(w.shape[:-2]))
    nnz = int(np.count_nonzero(w))
    if fmt == "dense":
        return n_kernels * kernel_storage_bits(k, 0, fmt)
    if fmt == "bitmask":
        return n_kernels * k * k + WEIGHT_BITS * nnz
    if fmt == "csr":
        ptr_bits, idx_bits = csr_field_bits(k)
        return n_kernels * (k + 1) * ptr_bits + nnz * (idx_bits + WEIGHT_BITS)
    raise ValueError(f"unknown format {fmt!r}")


# --- pruning and quantization ------------------------------------------------

@dataclass
class LayerWeights:
    """Quantized weights of one convolution stage."""

    q: np.ndarray  # int, shape (out_C, in_C, k, k), values in [-127, 127]
    scale: float = 1.0
    layer_id: int = 0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.int64)
        if self.q.ndim != 4 or self.q.shape[2] != self.q.shape[3]:
            raise ValueError(f"weights must be (out_C, in_C, k, k), got {self.q.shape}")
        if self.k not in KERNEL_SIZES:
            raise ValueError(f"kernel size {self.k} not in {KERNEL_SIZES}")
        if self.q.size and np.abs(self.q).max() > Q_MAX:
            raise ValueError("quantized weights must lie in [-127, 127]")

    @property
    def k(self) -> int:
        return self.q.shape[-1]

    @property
    def out_c(self) -> int:
        return self.q.shape[0]

    @property
    def in_c(self) -> int:
        return self.q.shape[1]

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.q))

    def density(self) -> float:
        return self.nnz / self.q.size if self.q.size else 0.0

    def bitmask_kernels(self) -> list[list[BitmaskKernel]]:
        return [[encode_bitmask(self.q[o, i]) for i in range(self.in_c)]
                for o in range(self.out_c)]

    def nnz_matrix(self) -> np.ndarray:
        """Nonzero count per (out, in) kernel."""
        return np.count_nonzero(self.q, axis=(2, 3))


def _n_pruned(rate: float, n: int) -> int:
    if not 0 <= rate < 1:
        raise ValueError(f"pruning rate must lie in [0, 1), got {rate}")
    # decimal-exact floor: 0.29 * 100 must give 29, not 28
    return math.floor(Fraction(repr(float(rate))) * n)


def _magnitude_mask(values: np.ndarray, n_zero: int) -> np.ndarray:
    order = np.argsort(np.abs(values), kind="stable")
    keep = np.ones(values.size, dtype=bool)
    keep[order[:n_zero]] = False
    return keep


@dataclass
class PruneReport:
    layer_id: int
    k: int
    total: int
    nonzero_before: int
    nonzero_after: int

    @property
    def density(self) -> float:
        return self.nonzero_after / self.total if self.total else 0.0


def prune_magnitude(weights, rate: float):
    """Zero the ``floor(rate * N)`` smallest-magnitude weights of a 3x3 layer.

    Ties go to the lower flat index.  1x1 layers are returned unchanged.
    Accepts a raw array or :class:`LayerWeights`; returns the same kind plus a
    :class:`PruneReport`.
    """
    lw = weights if isinstance(weights, LayerWeights) else None
    w = np.array(lw.q if lw else weights, copy=True)
    n_zero = _n_pruned(rate, w.size)
    before = int(np.count_nonzero(w))
    if w.shape[-1] != 1 and n_zero:
        keep = _magnitude_mask(w.reshape(-1), n_zero)
        w.reshape(-1)[~keep] = 0
    report = PruneReport(lw.layer_id if lw else 0, w.shape[-1], w.size, before,
                         int(np.count_nonzero(w)))
    if lw is not None:
        return LayerWeights(w, lw.scale, lw.layer_id), report
    return w, report


def prune_network(layers: list[LayerWeights], rate: float, mode: str = "layer"):
    """Prune every 3x3 layer.

    ``mode="layer"`` applies the rate inside each layer; ``mode="global"``
    ranks all 3x3 weights of the network together, comparing dequantized
    magnitudes (``q * scale``).
    """
    if mode == "layer":
        pairs = [prune_magnitude(lw, rate) for lw in layers]
        return [p[0] for p in pairs], [p[1] for p in pairs]
    if mode != "global":
        raise ValueError(f"unknown pruning mode {mode!r}")
    idx3 = [i for i, lw in enumerate(layers) if lw.k != 1]
    flat = np.concatenate([layers[i].q.reshape(-1) * layers[i].scale for i in idx3]) \
        if idx3 else np.zeros(0)
    keep = _magnitude_mask(flat, _n_pruned(rate, flat.size))
    out, reports, offset = [], [], 0
    for i, lw in enumerate(layers):
        q = lw.q.copy()
        if i in idx3:
            q.reshape(-1)[~keep[offset:offset + q.size]] = 0
            offset += q.size
        out.append(LayerWeights(q, lw.scale, lw.layer_id))
        reports.append(PruneReport(lw.layer_id, lw.k, q.size, lw.nnz, int(np.count_nonzero(q))))
    return out, reports


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize8(weights) -> tuple[np.ndarray, float]:
    """Symmetric per-layer quantization to [-127, 127].

    ``scale = max|w| / 127`` (1.0 for an all-zero layer) and
    ``q = round(w / scale)`` with halves rounded away from zero.
    """
    w = np.asarray(weights, dtype=np.float64)
    if not np.isfinite(w).all():
        raise ValueError("weights must be finite")
    peak = float(np.abs(w).max()) if w.size else 0.0
    scale = peak / Q_MAX if peak > 0 else 1.0
    q = np.clip(round_half_away(w / scale), -Q_MAX, Q_MAX).astype(np.int64)
    return q, scale


def dequantize(q, scale: float) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * scale


# --- SNNW weight files -------------------------------------------------------

WEIGHT_MAGIC = b"SNNW"
WEIGHT_VERSION = 1
_FILE_HEAD = struct.Struct("<4sBH")
_LAYER_HEAD = struct.Struct("<HHHBBI")
FORMAT_CODES = {"dense": 0, "bitmask": 1, "csr": 2}


def _encode_kernel(kernel: np.ndarray, fmt: str) -> bytes:
    k = kernel.shape[0]
    if fmt == "dense":
        return kernel.astype("<i1").tobytes()
    if fmt == "bitmask":
        bk = encode_bitmask(kernel)
        bits = np.array([bk.mask >> (k * k - 1 - i) & 1 for i in range(k * k)], dtype=np.uint8)
        return np.packbits(bits).tobytes() + np.array(bk.values, dtype="<i1").tobytes()
    ck = encode_csr(kernel)
    return bytes(ck.row_ptr) + bytes(ck.col_idx) + np.array(ck.values, dtype="<i1").tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated weight file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def _decode_kernel(rd: _Reader, k: int, fmt: str) -> np.ndarray:
    n = k * k
    if fmt == "dense":
        return np.frombuffer(rd.take(n), dtype="<i1").astype(np.int64).reshape(k, k)
    if fmt == "bitmask":
        nbytes = (n + 7) // 8
        bits = np.unpackbits(np.frombuffer(rd.take(nbytes), dtype=np.uint8))
        if bits[n:].any():
            raise CorruptKernelError("nonzero padding bits in kernel mask")
        mask = int("".join(map(str, bits[:n])), 2)
        nnz = int(bits[:n].sum())
        values = tuple(int(v) for v in np.frombuffer(rd.take(nnz), dtype="<i1"))
        return decode_bitmask(BitmaskKernel(k, mask, values))
    row_ptr = tuple(rd.take(k + 1))
    nnz = row_ptr[-1]
    col_idx = tuple(rd.take(nnz))
    values = tuple(int(v) for v in np.frombuffer(rd.take(nnz), dtype="<i1"))
    kernel = decode_csr(CsrKernel(k, row_ptr, col_idx, values))
    if any(v == 0 for v in values):
        raise CorruptKernelError("CSR kernel stores an explicit zero")
    return kernel


def encode_weights(layers: list[LayerWeights], fmt: str = "bitmask") -> bytes:
    if fmt not in FORMAT_CODES:
        raise ValueError(f"unknown format {fmt!r}")
    chunks = [_FILE_HEAD.pack(WEIGHT_MAGIC, WEIGHT_VERSION, len(layers))]
    for lw in layers:
        scale_raw = struct.unpack("<I", struct.pack("<f", lw.scale))[0]
        chunks.append(_LAYER_HEAD.pack(lw.layer_id, lw.out_c, lw.in_c, lw.k,
                                       FORMAT_CODES[fmt], scale_raw))
        for o in range(lw.out_c):
            for i in range(lw.in_c):
                chunks.append(_encode_kernel(lw.q[o, i], fmt))
    return b"".join(chunks)


def decode_weights(buf: bytes) -> list[LayerWeights]:
    rd = _Reader(buf)
    magic, version, n_layers = rd.unpack(_FILE_HEAD)
    if magic != WEIGHT_MAGIC:
        raise FormatError(f"bad weight magic {magic!r}")
    if version != WEIGHT_VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    names = {v: k for k, v in FORMAT_CODES.items()}
    layers = []
    for _ in range(n_layers):
        layer_id, out_c, in_c, k, code, scale_raw = rd.unpack(_LAYER_HEAD)
        if code not in names:
            raise FormatError(f"unknown kernel format code {code}")
        if k not in KERNEL_SIZES or out_c == 0 or in_c == 0:
            raise FormatError(f"bad layer geometry out_C={out_c} in_C={in_c} k={k}")
        scale = struct.unpack("<f", struct.pack("<I", scale_raw))[0]
        q = np.zeros((out_c, in_c, k, k), dtype=np.int64)
        for o in range(out_c):
            for i in range(in_c):
                q[o, i] = _decode_kernel(rd, k, names[code])
        if np.abs(q).max(initial=0) > Q_MAX:
            raise FormatError("weight value -128 is outside the symmetric 8-bit range")
        layers.append(LayerWeights(q, scale, layer_id))
    if rd.pos != len(buf):
        raise FormatError(f"{len(buf) - rd.pos} trailing bytes after last layer")
    return layers


def write_weights(path, layers: list[LayerWeights], fmt: str = "bitmask") -> None:
    atomic_write(path, encode_weights(layers, fmt))


def read_weights(path) -> list[LayerWeights]:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())
