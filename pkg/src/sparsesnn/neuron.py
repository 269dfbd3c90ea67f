"""Fixed-point LIF neurons, the averaging output layer and OR max-pooling.

Potentials and currents are raw integers in Q8 (8 fractional bits): the raw
value 128 is 0.5.  Integer convolution outputs built from 8-bit weights are
fed to the neurons unchanged, so one weight LSB is 1/256.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

FRAC_BITS = 8
ONE = 1 << FRAC_BITS
ACC_MIN = -(1 << 15)
ACC_MAX = (1 << 15) - 1


def to_fixed(x) -> np.ndarray | int:
    """Real value(s) to raw Q8, rounding half to even."""
    raw = np.rint(np.asarray(x, dtype=np.float64) * ONE).astype(np.int64)
    return int(raw) if raw.ndim == 0 else raw


def from_fixed(raw):
    return np.asarray(raw, dtype=np.float64) / ONE


@dataclass(frozen=True)
class LifParams:
    threshold: float = 0.5
    leak: float = 0.25
    reset: str = "hard"  # "hard" -> 0 after a spike, "subtract" -> V - threshold

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if not 0 <= self.leak < 1:
            raise ValueError("leak must lie in [0, 1)")
        for name in ("threshold", "leak"):
            v = getattr(self, name)
            if v * ONE != int(v * ONE):
                raise ValueError(f"{name}={v} is not exact in Q{FRAC_BITS}")
        if self.reset not in ("hard", "subtract"):
            raise ValueError(f"unknown reset mode {self.reset!r}")

    @property
    def threshold_raw(self) -> int:
        return int(self.threshold * ONE)

    @property
    def leak_raw(self) -> int:
        return int(self.leak * ONE)


class AccumulatorOverflow(ArithmeticError):
    pass


def apply_leak(v: np.ndarray, params: LifParams) -> np.ndarray:
    # floor(v * leak) exactly; for leak 0.25 this is v >> 2
    return (np.asarray(v, dtype=np.int64) * params.leak_raw) >> FRAC_BITS


def lif_step(current, membrane, params: LifParams = LifParams(), *, strict=False):
    """One discrete LIF update: leak, add the input current, fire, reset.

    Args:
        current: raw Q8 input current per neuron.
        membrane: raw Q8 potential carried from the previous step (zeros
            before the first step).
        params: threshold/leak/reset configuration.
        strict: raise :class:`AccumulatorOverflow` instead of saturating.

    Returns:
        ``(spikes, new_membrane, saturated)`` where ``saturated`` counts the
        neurons whose potential left the 16-bit range and was clamped.
    """
    v = apply_leak(membrane, params) + np.asarray(current, dtype=np.int64)
    out_of_range = (v < ACC_MIN) | (v > ACC_MAX)
    saturated = int(np.count_nonzero(out_of_range))
    if saturated:
        if strict:
            raise AccumulatorOverflow(f"{saturated} membrane potentials overflowed 16 bits")
        log.warning("membrane saturated at %d neurons", saturated)
        v = np.clip(v, ACC_MIN, ACC_MAX)
    spikes = v > params.threshold_raw
    if params.reset == "hard":
        v = np.where(spikes, 0, v)
    else:
        v = np.where(spikes, v - params.threshold_raw, v)
    return spikes.astype(np.uint8), v, saturated


def round_half_even_div(num, den: int) -> np.ndarray:
    """Integer ``num / den`` rounded to nearest, ties to even."""
    num = np.asarray(num, dtype=np.int64)
    q, r = np.divmod(num, den)
    twice = 2 * r
    bump = (twice > den) | ((twice == den) & (q % 2 == 1))
    return q + bump


def output_accumulate(currents, T: int | None = None) -> np.ndarray:
    """Average raw currents over the leading time axis with no reset or leak."""
    currents = np.asarray(currents, dtype=np.int64)
    if T is None:
        T = currents.shape[0]
    if T < 1 or currents.shape[0] != T:
        raise ValueError(f"expected {T} time steps, got {currents.shape[0]}")
    return round_half_even_div(currents.sum(axis=0), T)


def spike_maxpool(spikes, window: int = 2, stride: int | None = None) -> np.ndarray:
    """OR-pool the two trailing axes; odd sizes are edge-replicated first."""
    stride = window if stride is None else stride
    if stride != window:
        raise NotImplementedError("only non-overlapping pooling (stride == window) is modelled")
    x = np.asarray(spikes).astype(np.uint8)
    h, w = x.shape[-2:]
    ph, pw = (-h) % window, (-w) % window
    if ph or pw:
        widths = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
        x = np.pad(x, widths, mode="edge")
    h, w = x.shape[-2:]
    blocks = x.reshape(x.shape[:-2] + (h // window, window, w // window, window))
    return np.bitwise_or.reduce(np.bitwise_or.reduce(blocks, axis=-1), axis=-2)
