"""Analytical cost model of the accelerator.

Covers the KTBC loop schedule (output channel -> time step -> bit plane ->
input channel), on-chip SRAM sizing, external DRAM traffic and energy, the
temporal-channel reorder addressing, and a small FIFO simulation used to
compare PE parallelisation schemes.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .netspec import ConvStage
from .tensor import TILE_H, TILE_W, tile_partition
from .weights import LayerWeights, storage_bits

DRAM_J_PER_BIT = 70e-12
DEFAULT_CLOCK_HZ = 500e6
N_PE = TILE_H * TILE_W  # 576
BYTES_PER_KB = 1024
BYTES_PER_MB = 1_000_000
OUTPUT_POTENTIAL_BITS = 16


def input_sram_bits(channels: int, steps: int, tile_h: int = TILE_H, tile_w: int = TILE_W) -> int:
    """Bits to hold one tile of spikes for ``channels`` x ``steps``."""
    if min(channels, steps, tile_h, tile_w) < 1:
        raise ValueError("all arguments must be positive")
    return tile_h * tile_w * channels * steps


def dram_energy(bits) -> float:
    if bits < 0:
        raise ValueError("bit count must be non-negative")
    return bits * DRAM_J_PER_BIT


def mbytes_to_bits(mb: float) -> float:
    return mb * BYTES_PER_MB * 8


@dataclass(frozen=True)
class MemoryConfig:
    input_sram_bits: int = input_sram_bits(512, 1)   # 36 KB
    weight_map_sram_bits: int = 64 * BYTES_PER_KB * 8
    nz_weight_sram_bits: int = 128 * BYTES_PER_KB * 8
    clock_hz: float = DEFAULT_CLOCK_HZ
    out_pass_channels: int = 1  # output channels served per input re-read

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")


# --- reports ---------------------------------------------------------------

REPORT_FIELDS = ("cycles", "enabled_accum", "gated_accum", "dram_bits_in", "dram_bits_out",
                 "dram_bits_w", "energy_dram_j", "fps")


@dataclass
class SimReport:
    cycles: int = 0
    enabled_accum: int = 0
    gated_accum: int = 0
    dram_bits_in: int = 0
    dram_bits_out: int = 0
    dram_bits_w: int = 0
    energy_dram_j: float = 0.0
    fps: float = 0.0

    def __post_init__(self):
        for name in REPORT_FIELDS:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def dram_bits_total(self) -> int:
        return self.dram_bits_in + self.dram_bits_out + self.dram_bits_w

    def finalize(self, clock_hz: float = DEFAULT_CLOCK_HZ) -> "SimReport":
        """Fill the derived fields (energy, frame rate) in place."""
        self.energy_dram_j = dram_energy(self.dram_bits_total)
        self.fps = clock_hz / self.cycles if self.cycles else 0.0
        return self

    def bandwidth_bytes_per_s(self) -> float:
        return self.dram_bits_total / 8 * self.fps

    def merge(self, other: "SimReport") -> "SimReport":
        """Sum the count fields; derived fields must be refreshed with finalize()."""
        return SimReport(*(getattr(self, n) + getattr(other, n) for n in REPORT_FIELDS[:6]))

    def values(self) -> list[str]:
        return [_fmt(getattr(self, n)) for n in REPORT_FIELDS]

    def to_text(self) -> str:
        return "".join(f"{n}: {v}\n" for n, v in zip(REPORT_FIELDS, self.values()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        writer.writerow(self.values())
        return buf.getvalue()

    @classmethod
    def from_mapping(cls, data: dict) -> "SimReport":
        missing = set(REPORT_FIELDS) - set(data)
        if missing:
            raise ValueError(f"report lacks fields {sorted(missing)}")
        kw = {n: (float(data[n]) if n in ("energy_dram_j", "fps") else int(data[n]))
              for n in REPORT_FIELDS}
        return cls(**kw)

    @classmethod
    def from_text(cls, text: str) -> "SimReport":
        data = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition(":")
                data[key.strip()] = value.strip()
        return cls.from_mapping(data)

    @classmethod
    def from_csv(cls, text: str) -> "SimReport":
        rows = list(csv.reader(io.StringIO(text)))
        return cls.from_mapping(dict(zip(rows[0], rows[1])))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(int(v))


# --- loop schedule -----------------------------------------------------------

@dataclass
class StageSchedule:
    name: str
    tiles: int
    cycles: int
    pe_passes: int        # tile-channel loads: K * T * B * C * tiles
    skipped_kernels: int  # all-zero kernels that cost no cycle

    @property
    def busy_fraction(self) -> float:
        return 1 - self.skipped_kernels / self.pe_passes if self.pe_passes else 0.0


@dataclass
class Schedule:
    stages: list[StageSchedule] = field(default_factory=list)
    clock_hz: float = DEFAULT_CLOCK_HZ

    @property
    def cycles(self) -> int:
        return sum(s.cycles for s in self.stages)

    @property
    def fps(self) -> float:
        return self.clock_hz / self.cycles if self.cycles else 0.0


def _q(weights) -> np.ndarray:
    return weights.q if isinstance(weights, LayerWeights) else np.asarray(weights)


def stage_schedule(stage: ConvStage, weights) -> StageSchedule:
    q = _q(weights)
    if q.shape != (stage.out_c, stage.in_c, stage.k, stage.k):
        raise ValueError(f"{stage.name}: weights {q.shape} do not match the stage geometry")
    nnz = np.count_nonzero(q, axis=(2, 3))
    n_tiles = len(tile_partition((stage.h, stage.w)))
    cycles = passes = skipped = 0
    for k_out in range(stage.out_c):
        for _t in range(stage.conv_t):
            for _b in range(stage.bits):
                for c_in in range(stage.in_c):
                    cycles += int(nnz[k_out, c_in]) * n_tiles
                    passes += n_tiles
                    skipped += n_tiles if nnz[k_out, c_in] == 0 else 0
    return StageSchedule(stage.name, n_tiles, cycles, passes, skipped)


def ktbc_schedule(stages, weights, clock_hz: float = DEFAULT_CLOCK_HZ) -> Schedule:
    """Cycle count of a network (or one stage) under the KTBC loop nest.

    ``weights`` is a sequence aligned with ``stages``.  Every nonzero weight
    costs one cycle per input channel, bit plane, conv evaluation and tile;
    zero weights cost nothing.
    """
    if isinstance(stages, ConvStage):
        stages, weights = [stages], [weights]
    if len(stages) != len(weights):
        raise ValueError("need one weight tensor per stage")
    return Schedule([stage_schedule(s, w) for s, w in zip(stages, weights)], clock_hz)


# --- DRAM traffic --------------------------------------------------------------

@dataclass
class StageTraffic:
    name: str
    in_bits: int
    out_bits: int
    w_bits: int
    refetch: int
    tile_footprint_bits: int


def refetch_factor(tile_footprint_bits: int, out_c: int, mem: MemoryConfig) -> int:
    """How often the input must stream in from DRAM.

    Once if a whole tile (all channels and steps) fits the input SRAM,
    otherwise once per pass over ``out_pass_channels`` output channels.
    """
    if tile_footprint_bits <= mem.input_sram_bits:
        return 1
    return math.ceil(out_c / mem.out_pass_channels)


def stage_traffic(stage: ConvStage, weights, mem: MemoryConfig) -> StageTraffic:
    q = _q(weights)
    tile_h, tile_w = min(stage.h, TILE_H), min(stage.w, TILE_W)
    # pixels of the encoding layer are 8 bits wide, spikes 1 bit
    depth = stage.in_c * stage.in_t * stage.bits
    footprint = tile_h * tile_w * depth
    refetch = refetch_factor(footprint, stage.out_c, mem)
    in_bits = stage.h * stage.w * depth * refetch
    if stage.kind == "output":
        out_bits = stage.out_h * stage.out_w * stage.out_c * OUTPUT_POTENTIAL_BITS
    else:
        out_bits = stage.out_h * stage.out_w * stage.out_c * stage.out_t
    w_bits = storage_bits(q, "bitmask")
    n_kernels = q.shape[0] * q.shape[1]
    mask_bits = n_kernels * stage.k * stage.k
    if mask_bits > mem.weight_map_sram_bits or w_bits - mask_bits > mem.nz_weight_sram_bits:
        # weights no longer stay resident across tiles
        w_bits *= len(tile_partition((stage.h, stage.w)))
    return StageTraffic(stage.name, in_bits, out_bits, w_bits, refetch, footprint)


def dram_traffic(stages, weights, mem: MemoryConfig = MemoryConfig()) -> list[StageTraffic]:
    if isinstance(stages, ConvStage):
        stages, weights = [stages], [weights]
    return [stage_traffic(s, w, mem) for s, w in zip(stages, weights)]


def traffic_totals(traffic: list[StageTraffic]) -> dict[str, int]:
    return {"dram_bits_in": sum(t.in_bits for t in traffic),
            "dram_bits_out": sum(t.out_bits for t in traffic),
            "dram_bits_w": sum(t.w_bits for t in traffic)}


# --- temporal-channel reorder -------------------------------------------------

def reorder_address(k: int, t: int, b: int, C: int, B: int = 1, T: int | None = None) -> int:
    """Output slot for channel ``k``, step ``t``, bit plane ``b``.

    Slots are laid out so the next layer reads all channels of one
    (step, bit plane) contiguously.
    """
    if not (0 <= k < C and 0 <= b < B and t >= 0 and (T is None or t < T)):
        raise ValueError(f"index (k={k}, t={t}, b={b}) outside C={C}, T={T}, B={B}")
    return (t * B + b) * C + k


# --- parallelisation study ---------------------------------------------------

@dataclass(frozen=True)
class PeOrg:
    """How the 576 PEs are split across input channels, rows and columns."""

    ic_par: int = 1
    h_par: int = TILE_H
    w_par: int = TILE_W
    fifo_depth: int | None = None  # None = unbounded
    drain_rate: int = 1            # FIFO entries the merger retires per cycle
    oc_par: int = 1

    def __post_init__(self):
        if self.oc_par * self.ic_par * self.h_par * self.w_par != N_PE:
            raise ValueError(f"PE organisation {self} does not use exactly {N_PE} PEs")
        if self.ic_par > 1 and self.oc_par > 1:
            raise ValueError("mixing input- and output-channel parallelism is not modelled")
        if self.fifo_depth is not None and self.fifo_depth < 1:
            raise ValueError("FIFO depth must be >= 1 (or None for unbounded)")
        if self.drain_rate < 1:
            raise ValueError("drain_rate must be >= 1")

    @property
    def passes(self) -> int:
        """Spatial passes needed to cover one 18 x 32 tile."""
        return N_PE // (self.h_par * self.w_par)


def input_parallel_pass(nnz_per_channel, ic_par: int, fifo_depth: int | None = None,
                        drain_rate: int = 1) -> int:
    """Cycles for one spatial pass with channels spread over ``ic_par`` lanes.

    Channel ``c`` runs on lane ``c % ic_par`` for ``nnz[c]`` cycles and then
    pushes its partial sum into the lane's FIFO; a lane whose FIFO is full
    stalls.  One merger retires up to ``drain_rate`` entries per cycle, oldest
    first.  An entry pushed in cycle ``t`` can be merged in cycle ``t + 1``.
    """
    nnz = [int(n) for n in nnz_per_channel]
    if any(n < 0 for n in nnz):
        raise ValueError("nnz counts must be non-negative")
    lanes = [deque(n for n in nnz[j::ic_par] if n > 0) for j in range(ic_par)]
    remaining = [0] * ic_par
    holding = [False] * ic_par
    fifos = [deque() for _ in range(ic_par)]
    cap = math.inf if fifo_depth is None else fifo_depth
    t = last = 0
    while any(lanes) or any(remaining) or any(holding) or any(fifos):
        t += 1
        ready = sorted((f[0], j) for j, f in enumerate(fifos) if f and f[0] < t)
        for _, j in ready[:drain_rate]:
            fifos[j].popleft()
            last = t
        for j in range(ic_par):
            if holding[j]:
                continue
            if remaining[j] == 0 and lanes[j]:
                remaining[j] = lanes[j].popleft()
            if remaining[j]:
                remaining[j] -= 1
                last = t
                if remaining[j] == 0:
                    holding[j] = True
        for j in range(ic_par):
            if holding[j] and len(fifos[j]) < cap:
                fifos[j].append(t)
                holding[j] = False
    return last


def spatial_latency(workload) -> int:
    return int(np.asarray(workload).sum())


def output_parallel_latency(workload, oc_par: int) -> int:
    """Co-scheduled output channels advance to the next input channel together."""
    w = np.atleast_2d(np.asarray(workload))
    total = 0
    for g in range(0, w.shape[0], oc_par):
        total += int(w[g:g + oc_par].max(axis=0).sum())
    return total * oc_par


def parallelism_latency(org: PeOrg, workload) -> int:
    """Latency of one tile for a ``(out_C, in_C)`` nnz workload.

    Spatial parallelism takes ``sum(nnz)`` cycles.  Channel-parallel schemes
    cover a fraction of the tile per pass and need ``org.passes`` passes.
    """
    w = np.atleast_2d(np.asarray(workload))
    if org.oc_par > 1:
        return output_parallel_latency(w, org.oc_par)
    if org.ic_par == 1:
        return spatial_latency(w)
    per_pass = sum(input_parallel_pass(row, org.ic_par, org.fifo_depth, org.drain_rate)
                   for row in w)
    return per_pass * org.passes


def org_for(ic_par: int = 1, oc_par: int = 1, fifo_depth: int | None = None,
            drain_rate: int = 1) -> PeOrg:
    """A PE organisation splitting the tile spatially as evenly as possible."""
    share = N_PE // (ic_par * oc_par)
    if share * ic_par * oc_par != N_PE:
        raise ValueError(f"{ic_par * oc_par} does not divide {N_PE}")
    splits = [(h, share // h) for h in range(1, TILE_H + 1)
              if TILE_H % h == 0 and share % h == 0 and TILE_W % (share // h) == 0]
    if not splits:
        raise ValueError(f"{share} PEs per channel cannot tile an {TILE_H}x{TILE_W} block")
    h, w = min(splits, key=lambda hw: abs(hw[0] - hw[1]))
    return PeOrg(ic_par, h, w, fifo_depth, drain_rate, oc_par)
