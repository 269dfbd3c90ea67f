"""Network descriptions and their expansion into primitive conv stages.

A :class:`NetworkSpec` lists layers as they appear in a model diagram
(encoding layer, conv blocks, CSP basic blocks, output layer).  The hardware
only ever runs single convolutions, so :func:`expand` flattens every layer
into :class:`ConvStage` records carrying their resolved geometry.

Text format (one layer per line, ``#`` starts a comment)::

    snn-net 1
    input <C> <H> <W>
    <kind> <out_C> <k> <in_T> <out_T> <pool_flag>
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .tensor import N_BITS, FormatError

LAYER_KINDS = ("encode", "conv", "csp_block", "output")
MAX_CHANNELS = 512
MAX_T = 4
MAX_H, MAX_W = 576, 1024
NETSPEC_VERSION = 1
CSP_DEPTH = 2


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_c: int
    k: int = 3
    in_t: int = 1
    out_t: int = 1
    maxpool: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.k not in (1, 3):
            raise ValueError(f"kernel size must be 1 or 3, got {self.k}")
        if not 1 <= self.out_c <= MAX_CHANNELS:
            raise ValueError(f"out_C={self.out_c} outside [1, {MAX_CHANNELS}]")
        if not 1 <= self.in_t <= self.out_t <= MAX_T:
            raise ValueError(f"need 1 <= in_T <= out_T <= {MAX_T}, got {self.in_t}, {self.out_t}")
        if self.in_t != self.out_t and self.in_t != 1:
            raise ValueError("a layer either keeps its time steps or expands from one step")
        if self.kind == "csp_block" and (self.out_c % 2 or self.k != 3):
            raise ValueError("a CSP block needs an even channel count and 3x3 stacked convs")


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int]  # (C, H, W)
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        c, h, w = self.input_shape
        if c < 1 or not (1 <= h <= MAX_H and 1 <= w <= MAX_W):
            raise ValueError(f"input shape {self.input_shape} outside the supported range")
        if c > MAX_CHANNELS:
            raise ValueError(f"{c} input channels exceed {MAX_CHANNELS}")
        for i, layer in enumerate(self.layers):
            if layer.kind == "encode" and i != 0:
                raise ValueError("only the first layer may be an encoding layer")
            if layer.kind == "output" and i != len(self.layers) - 1:
                raise ValueError("the output layer must come last")
            if i and layer.in_t != self.layers[i - 1].out_t:
                raise ValueError(f"layer {i} expects in_T={layer.in_t} "
                                 f"but layer {i - 1} produces out_T={self.layers[i - 1].out_t}")


@dataclass(frozen=True)
class ConvStage:
    """One convolution the accelerator executes, with resolved geometry."""

    index: int
    layer: int              # index of the LayerSpec this stage came from
    name: str
    kind: str               # "encode", "conv" or "output"
    in_c: int
    out_c: int
    k: int
    h: int                  # conv resolution (input rows)
    w: int
    in_t: int
    out_t: int
    pool: bool
    sources: tuple[int, ...]  # stage indices concatenated as input; -1 = network input

    @property
    def bits(self) -> int:
        """Input bit planes B: 8 for the encoding layer, else 1."""
        return N_BITS if self.kind == "encode" else 1

    @property
    def conv_t(self) -> int:
        """How many times the convolution itself runs per frame."""
        return self.in_t

    @property
    def out_h(self) -> int:
        return (self.h + 1) // 2 if self.pool else self.h

    @property
    def out_w(self) -> int:
        return (self.w + 1) // 2 if self.pool else self.w


def expand(net: NetworkSpec) -> list[ConvStage]:
    stages: list[ConvStage] = []
    c, h, w = net.input_shape
    src = -1

    def add(layer_idx, name, kind, in_c, out_c, k, in_t, out_t, pool, sources):
        st = ConvStage(len(stages), layer_idx, name, kind, in_c, out_c, k, h, w,
                       in_t, out_t, pool, tuple(sources))
        stages.append(st)
        return st

    for li, layer in enumerate(net.layers):
        t = layer.in_t
        if layer.kind == "csp_block":
            n, half = layer.out_c, layer.out_c // 2
            prev = src
            s = add(li, f"L{li}.csp.stack0", "conv", c, n, layer.k, t, t, False, [prev])
            for d in range(1, CSP_DEPTH):
                s = add(li, f"L{li}.csp.stack{d}", "conv", n, n, layer.k, t, t, False, [s.index])
            short = add(li, f"L{li}.csp.shortcut", "conv", c, half, 1, t, t, False, [prev])
            last = add(li, f"L{li}.csp.aggregate", "conv", n + half, n, 1, t, layer.out_t,
                       layer.maxpool, [s.index, short.index])
        else:
            kind = layer.kind
            if kind == "encode" and src != -1:
                raise ValueError("encoding layer must read the network input")
            last = add(li, f"L{li}.{kind}", kind, c, layer.out_c, layer.k, t, layer.out_t,
                       layer.maxpool, [src])
        src = last.index
        c = last.out_c
        h, w = last.out_h, last.out_w
    return stages


def reference_network() -> NetworkSpec:
    """Desk-scale stand-in network with (1, 3) mixed time steps."""
    return NetworkSpec((3, 36, 64), (
        LayerSpec("encode", 16, 3, 1, 1, False),
        LayerSpec("conv", 32, 3, 1, 3, True),
        LayerSpec("csp_block", 32, 3, 3, 3, False),
        LayerSpec("output", 24, 1, 3, 3, False),
    ))


# --- text format ---------------------------------------------------------------

def format_netspec(net: NetworkSpec) -> str:
    c, h, w = net.input_shape
    lines = [f"snn-net {NETSPEC_VERSION}", f"input {c} {h} {w}",
             "# kind out_C k in_T out_T pool"]
    for layer in net.layers:
        lines.append(f"{layer.kind} {layer.out_c} {layer.k} {layer.in_t} {layer.out_t} "
                     f"{int(layer.maxpool)}")
    return "\n".join(lines) + "\n"


def parse_netspec(text: str) -> NetworkSpec:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows or rows[0][1][0] != "snn-net":
        raise FormatError("network file must start with 'snn-net <version>'")
    head = rows[0][1]
    if len(head) != 2 or head[1] != str(NETSPEC_VERSION):
        raise FormatError(f"unsupported network file version {head[1:]}")
    if len(rows) < 2 or rows[1][1][0] != "input" or len(rows[1][1]) != 4:
        raise FormatError("second line must be 'input <C> <H> <W>'")
    try:
        shape = tuple(int(v) for v in rows[1][1][1:])
        layers = []
        for lineno, tok in rows[2:]:
            if len(tok) != 6:
                raise FormatError(f"line {lineno}: expected 6 fields, got {len(tok)}")
            kind, out_c, k, in_t, out_t, pool = tok
            if pool not in ("0", "1"):
                raise FormatError(f"line {lineno}: pool flag must be 0 or 1")
            layers.append(LayerSpec(kind, int(out_c), int(k), int(in_t), int(out_t), pool == "1"))
        return NetworkSpec(shape, tuple(layers))
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def read_netspec(path) -> NetworkSpec:
    with open(path) as fh:
        return parse_netspec(fh.read())


# --- mixed time steps ----------------------------------------------------------

_CUT_RE = re.compile(r"^C(\d+)(?:B(\d+))?$")


def cut_layer_index(net: NetworkSpec, cut: str) -> int | None:
    """Layer index that turns one input step into multiple output steps.

    ``C<n>``: the n-th convolutional layer (the encoding layer counts as the
    first).  ``C2B<x>``: the x-th basic block after the first two conv
    layers.  ``none`` leaves the network alone.
    """
    if cut.lower() == "none":
        return None
    m = _CUT_RE.match(cut)
    if not m:
        raise ValueError(f"invalid cut point {cut!r}")
    n_conv, n_block = int(m.group(1)), m.group(2)
    conv_idx = [i for i, l in enumerate(net.layers) if l.kind in ("encode", "conv")]
    if n_conv < 1 or n_conv > len(conv_idx) or conv_idx[:n_conv] != list(range(n_conv)):
        raise ValueError(f"cut {cut!r}: network does not start with {n_conv} conv layers")
    if n_block is None:
        return n_conv - 1
    n_block = int(n_block)
    block_idx = [i for i, l in enumerate(net.layers) if l.kind == "csp_block" and i >= n_conv]
    if n_block < 1 or n_block > len(block_idx):
        raise ValueError(f"cut {cut!r}: network has only {len(block_idx)} basic blocks")
    if any(net.layers[i].kind not in ("encode", "conv", "csp_block")
           for i in range(block_idx[n_block - 1])):
        raise ValueError(f"cut {cut!r} passes a non-convolutional layer")
    return block_idx[n_block - 1]


def mixed_timestep_plan(net: NetworkSpec, cut: str, steps: int = 3) -> NetworkSpec:
    idx = cut_layer_index(net, cut)
    if idx is None:
        return net
    layers = []
    for i, layer in enumerate(net.layers):
        if i < idx:
            layers.append(replace(layer, in_t=1, out_t=1))
        elif i == idx:
            layers.append(replace(layer, in_t=1, out_t=steps))
        else:
            layers.append(replace(layer, in_t=steps, out_t=steps))
    return NetworkSpec(net.input_shape, tuple(layers))
