"""Whole-network inference, operation counts and the mIoUT similarity metric."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataflow import MemoryConfig, SimReport, dram_traffic, traffic_totals
from .engine import GateStats, layer_forward
from .netspec import ConvStage, NetworkSpec, expand
from .neuron import LifParams
from .tensor import MultibitTensor, SpikeTensor
from .weights import LayerWeights, quantize8

log = logging.getLogger(__name__)


@dataclass
class ForwardResult:
    stages: list[ConvStage]
    outputs: list[np.ndarray]   # spikes (T, C, H, W) per stage; output stage: (C, H, W) ints
    stats: GateStats
    report: SimReport

    def stage_input(self, index: int, net_input=None) -> np.ndarray:
        return _gather(self.stages[index], self.outputs, net_input)

    def final(self) -> np.ndarray:
        return self.outputs[-1]


def _gather(stage: ConvStage, outputs, net_input) -> np.ndarray:
    parts = [net_input if s == -1 else outputs[s] for s in stage.sources]
    if len(parts) == 1:
        return parts[0]
    return np.concatenate(parts, axis=1)


def _check_weights(stages: list[ConvStage], weights: list[LayerWeights]) -> None:
    if len(weights) != len(stages):
        raise ValueError(f"network has {len(stages)} conv stages but {len(weights)} weight layers")
    for st, lw in zip(stages, weights):
        q = lw.q if isinstance(lw, LayerWeights) else np.asarray(lw)
        if q.shape != (st.out_c, st.in_c, st.k, st.k):
            raise ValueError(f"{st.name}: expected weights {(st.out_c, st.in_c, st.k, st.k)}, "
                             f"got {q.shape}")


def network_forward(x, net: NetworkSpec, weights: list[LayerWeights],
                    params: LifParams = LifParams(), mem: MemoryConfig = MemoryConfig()
                    ) -> ForwardResult:
    """Run every conv stage of ``net`` in order and account the hardware cost.

    ``x`` is an 8-bit ``(C, H, W)`` image when the first layer encodes, or a
    ``(T, C, H, W)`` spike tensor otherwise.
    """
    if isinstance(x, (MultibitTensor, SpikeTensor)):
        x = x.data
    x = np.asarray(x)
    stages = expand(net)
    _check_weights(stages, weights)
    expected = tuple(net.input_shape)
    if x.shape[-3:] != expected:
        raise ValueError(f"input shape {x.shape} does not match network input {expected}")

    outputs: list[np.ndarray] = []
    stats = GateStats()
    for st, lw in zip(stages, weights):
        out, delta = layer_forward(_gather(st, outputs, x), st, lw, params)
        outputs.append(out)
        stats += delta
        log.debug("%s: %s cycles", st.name, delta.cycles)
    if stats.saturated:
        log.warning("%d accumulator saturations during forward pass", stats.saturated)

    report = SimReport(stats.cycles, stats.enabled_accum, stats.gated_accum,
                       **traffic_totals(dram_traffic(stages, weights, mem)))
    report.finalize(mem.clock_hz)
    return ForwardResult(stages, outputs, stats, report)


# --- metrics -------------------------------------------------------------------

class UndefinedMetric(ValueError):
    pass


def miout(spikes) -> tuple[np.ndarray, float]:
    """Per-channel and mean IoU of firing patterns across time steps.

    With ``s`` the firing count of a neuron over ``T`` steps, a channel's
    intersection counts neurons with ``s == T`` and its partial set those with
    ``0 < s < T``; the channel score is ``I / (I + P)`` (0 when nothing fires).
    """
    s = np.asarray(spikes.data if isinstance(spikes, SpikeTensor) else spikes)
    if s.ndim != 4:
        raise ValueError("expected spikes shaped (T, C, H, W)")
    T = s.shape[0]
    if T < 2:
        raise UndefinedMetric("mIoUT needs at least two time steps")
    counts = s.astype(np.int64).sum(axis=0)
    inter = (counts == T).sum(axis=(1, 2))
    partial = ((counts > 0) & (counts < T)).sum(axis=(1, 2))
    denom = inter + partial
    per_channel = np.divide(inter, denom, out=np.zeros(len(denom)), where=denom > 0)
    return per_channel, float(per_channel.mean())


def op_count(net_or_stages, weights=None, mode: str = "dense") -> int:
    """Operations per frame, two per multiply-accumulate.

    Each stage contributes ``2 * MACs * H * W * conv_t * B`` where MACs is
    ``k*k*in_C*out_C`` (dense) or the number of nonzero weights (sparse).
    """
    stages = expand(net_or_stages) if isinstance(net_or_stages, NetworkSpec) else net_or_stages
    if mode not in ("dense", "sparse"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "sparse" and weights is None:
        raise ValueError("sparse op count needs weights")
    return sum(stage_ops(st, None if weights is None else weights[i], mode)
               for i, st in enumerate(stages))


def stage_ops(st: ConvStage, weights, mode: str = "dense") -> int:
    if mode == "dense":
        macs = st.k * st.k * st.in_c * st.out_c
    else:
        q = weights.q if isinstance(weights, LayerWeights) else np.asarray(weights)
        macs = int(np.count_nonzero(q))
    return 2 * macs * st.h * st.w * st.conv_t * st.bits


# --- synthetic data --------------------------------------------------------------

def reference_weights(net: NetworkSpec, seed: int = 0, low: int = -64, high: int = 64
                      ) -> list[LayerWeights]:
    """Seeded uniform integer weights, quantized per stage to 8 bits."""
    rng = np.random.default_rng(seed)
    layers = []
    for st in expand(net):
        raw = rng.integers(low, high, size=(st.out_c, st.in_c, st.k, st.k), endpoint=True)
        q, scale = quantize8(raw.astype(np.float64))
        layers.append(LayerWeights(q, scale, st.index))
    return layers


def random_image(shape, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=tuple(shape), dtype=np.uint8)


def nnz_workload(weights: list[LayerWeights]) -> list[np.ndarray]:
    """Per-(out, in) nnz matrices of the 3x3 stages, for the parallelism study."""
    return [lw.nnz_matrix() for lw in weights if lw.k == 3]
