"""Gated one-to-all product convolution.

Each nonzero weight at kernel position (R, C) is broadcast to every output
position of the tile at once.  The input tile shifted by (R, C) acts as the
enable map: enabled accumulators add the weight, the rest are clock-gated and
keep their partial sum.  Zero weights never reach the PE, so a kernel costs
exactly ``nnz`` cycles per input channel per tile.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from .netspec import ConvStage
from .neuron import FRAC_BITS, LifParams, lif_step, output_accumulate, spike_maxpool
from .tensor import TILE_H, TILE_W, N_BITS, bit_plane_split, replicate_pad, tile_partition
from .weights import BitmaskKernel, LayerWeights, encode_bitmask

log = logging.getLogger(__name__)

PSUM_MIN = -(1 << 15)
PSUM_MAX = (1 << 15) - 1


@dataclass
class GateStats:
    cycles: int = 0
    enabled_accum: int = 0
    gated_accum: int = 0
    saturated: int = 0

    def __add__(self, other: "GateStats") -> "GateStats":
        return GateStats(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def __iadd__(self, other: "GateStats") -> "GateStats":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def scaled(self, factor: int) -> "GateStats":
        return GateStats(*(getattr(self, f.name) * factor for f in fields(self)))


def enable_map(padded: np.ndarray, pos: tuple[int, int], k: int) -> np.ndarray:
    """Shift the padded input tile by the nonzero weight position.

    The result has the output tile dims ``(H_pad - k + 1, W_pad - k + 1)`` and
    ``enable[y, x] == padded[y + R, x + C]``.
    """
    r, c = pos
    if not (0 <= r < k and 0 <= c < k):
        raise ValueError(f"weight position {pos} outside a {k}x{k} kernel")
    h = padded.shape[-2] - k + 1
    w = padded.shape[-1] - k + 1
    return padded[..., r:r + h, c:c + w]


def gated_accumulate(psum: np.ndarray, enable: np.ndarray, weight: int):
    """Add ``weight`` to every enabled accumulator; one PE cycle.

    Accumulators are 16-bit; results outside the range are clamped and
    counted in ``GateStats.saturated``.
    """
    en = enable.astype(bool)
    total = psum.astype(np.int64) + np.where(en, int(weight), 0)
    clipped = np.clip(total, PSUM_MIN, PSUM_MAX)
    n_on = int(np.count_nonzero(en))
    stats = GateStats(cycles=1, enabled_accum=n_on, gated_accum=en.size - n_on,
                      saturated=int(np.count_nonzero(clipped != total)))
    return clipped, stats


def sparse_conv_channel(padded: np.ndarray, kernel, psum: np.ndarray | None = None):
    """Accumulate one input channel of a tile into ``psum``.

    ``padded`` is the input tile already padded by ``k // 2``.  Nonzero
    weights are visited leftmost-first, row by row, one cycle each.
    """
    bk = kernel if isinstance(kernel, BitmaskKernel) else encode_bitmask(kernel)
    k = bk.k
    out_shape = (padded.shape[-2] - k + 1, padded.shape[-1] - k + 1)
    acc = np.zeros(out_shape, dtype=np.int64) if psum is None else psum
    stats = GateStats()
    for pos, w in bk.nonzeros():
        acc, delta = gated_accumulate(acc, enable_map(padded, pos, k), w)
        stats += delta
    if stats.saturated:
        log.warning("partial sums saturated %d times", stats.saturated)
    return acc, stats


def _as_kernels(weights) -> tuple[list[list[BitmaskKernel]], int, int, int]:
    if isinstance(weights, LayerWeights):
        q = weights.q
    else:
        q = np.asarray(weights)
    if q.ndim != 4:
        raise ValueError(f"layer weights must be (out_C, in_C, k, k), got {q.shape}")
    kernels = [[encode_bitmask(q[o, i]) for i in range(q.shape[1])] for o in range(q.shape[0])]
    return kernels, q.shape[0], q.shape[1], q.shape[-1]


def block_conv(spikes: np.ndarray, weights, tile_h: int = TILE_H, tile_w: int = TILE_W):
    """Convolve a ``(C, H, W)`` binary map block by block.

    Every tile is replicate-padded on its own and convolved with no data from
    its neighbours, then written back at its origin.  Returns the
    ``(out_C, H, W)`` integer output and the accumulated :class:`GateStats`.
    """
    x = np.asarray(spikes)
    kernels, out_c, in_c, k = _as_kernels(weights)
    if x.ndim != 3 or x.shape[0] != in_c:
        raise ValueError(f"input shape {x.shape} does not match {in_c} input channels")
    pad = k // 2
    out = np.zeros((out_c,) + x.shape[1:], dtype=np.int64)
    stats = GateStats()
    for tile in tile_partition(x, tile_h, tile_w):
        padded = replicate_pad(tile.view(x), pad)
        rs, cs = tile.slices()
        for o in range(out_c):
            acc = np.zeros((tile.height, tile.width), dtype=np.int64)
            for i in range(in_c):
                acc, delta = sparse_conv_channel(padded[i], kernels[o][i], acc)
                stats += delta
            out[o, rs, cs] = acc
    return out, stats


def encode_layer_conv(img: np.ndarray, weights, tile_h: int = TILE_H, tile_w: int = TILE_W):
    """Bit-serial convolution of an 8-bit ``(C, H, W)`` image.

    Each bit plane goes through the spike datapath; the plane results are
    shifted by their bit weight and summed in a wide adder.
    """
    planes = bit_plane_split(img)
    total = None
    stats = GateStats()
    for b in range(N_BITS):
        part, delta = block_conv(planes[b], weights, tile_h, tile_w)
        stats += delta
        total = part << b if total is None else total + (part << b)
    return total, stats


# --- reference -----------------------------------------------------------------

def dense_conv_oracle(x, weights, padding: str = "zero") -> np.ndarray:
    """Textbook stride-1 cross-correlation with exact integer arithmetic.

    ``x`` is ``(C, H, W)``; ``weights`` is ``(C, k, k)`` for a single output
    channel or ``(K, C, k, k)``.  ``padding`` is ``"zero"``, ``"replicate"``
    (both keep ``H x W``) or ``"valid"``.
    """
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(weights, dtype=np.int64)
    single = w.ndim == 3
    if single:
        w = w[None]
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0] or w.shape[2] != w.shape[3]:
        raise ValueError(f"dim mismatch: input {x.shape}, weights {np.shape(weights)}")
    k = w.shape[-1]
    pad = k // 2
    if padding == "zero":
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    elif padding == "replicate":
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    out = np.einsum("chwij,kcij->khw", windows, w)
    return out[0] if single else out


def block_oracle(x, weights, tile_h: int = TILE_H, tile_w: int = TILE_W) -> np.ndarray:
    """Dense reference for :func:`block_conv`: replicate padding per tile."""
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(weights.q if isinstance(weights, LayerWeights) else weights, dtype=np.int64)
    out = np.zeros((w.shape[0],) + x.shape[1:], dtype=np.int64)
    for tile in tile_partition(x, tile_h, tile_w):
        rs, cs = tile.slices()
        out[:, rs, cs] = dense_conv_oracle(tile.view(x), w, padding="replicate")
    return out


class TimeStepMismatch(ValueError):
    pass


def stage_currents(x: np.ndarray, stage: ConvStage, weights):
    """Conv outputs (raw Q8 currents) for every conv evaluation of a stage.

    Returns an array of shape ``(stage.conv_t, out_C, H, W)``.  Encoding
    stages treat pixels as fractions of one, so the bit-serial sum is shifted
    down by 8 bits before it reaches the neurons.
    """
    stats = GateStats()
    if stage.kind == "encode":
        img = x[0] if x.ndim == 4 else x
        if x.ndim == 4 and x.shape[0] != 1:
            raise TimeStepMismatch("the encoding layer reads a single frame")
        acc, stats = encode_layer_conv(img, weights)
        return (acc >> FRAC_BITS)[None], stats
    if x.ndim != 4 or x.shape[0] != stage.in_t:
        raise TimeStepMismatch(
            f"{stage.name}: expected {stage.in_t} input time steps, got shape {x.shape}")
    out = []
    for t in range(stage.in_t):
        acc, delta = block_conv(x[t], weights)
        stats += delta
        out.append(acc)
    return np.stack(out), stats


def layer_forward(x: np.ndarray, stage: ConvStage, weights, params: LifParams = LifParams()):
    """Run one conv stage: convolution, LIF (or averaging) and optional pooling.

    ``x`` is ``(in_T, C, H, W)`` spikes, or a ``(C, H, W)`` 8-bit image for the
    encoding stage.  With ``in_T == out_T`` each step is convolved and fed to a
    membrane that persists across steps; with ``in_T == 1 < out_T`` the single
    conv result is injected at every output step.

    Returns ``(output, GateStats)``: spikes ``(out_T, out_C, H', W')`` or, for
    the output stage, averaged raw potentials ``(out_C, H, W)``.
    """
    x = np.asarray(x)
    if stage.in_t != stage.out_t and stage.in_t != 1:
        raise TimeStepMismatch(f"{stage.name}: cannot map {stage.in_t} steps to {stage.out_t}")
    currents, stats = stage_currents(x, stage, weights)
    if stage.kind == "output":
        seq = [currents[t if stage.in_t == stage.out_t else 0] for t in range(stage.out_t)]
        return output_accumulate(np.stack(seq), stage.out_t), stats
    membrane = np.zeros(currents.shape[1:], dtype=np.int64)
    frames = []
    for t in range(stage.out_t):
        cur = currents[t] if stage.in_t == stage.out_t else currents[0]
        spikes, membrane, sat = lif_step(cur, membrane, params)
        stats.saturated += sat
        frames.append(spike_maxpool(spikes) if stage.pool else spikes)
    return np.stack(frames).astype(np.uint8), stats
