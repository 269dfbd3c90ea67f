"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys

from . import dataflow as df
from .model import (miout, network_forward, nnz_workload, op_count, random_image,
                    reference_weights)
from .netspec import (expand, format_netspec, mixed_timestep_plan, read_netspec,
                      reference_network)
from .tensor import FormatError, KIND_I32, atomic_write, read_tensor, write_tensor
from .weights import FORMATS, prune_network, read_weights, storage_bits, write_weights

log = logging.getLogger("sparsesnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


class InvariantViolation(Exception):
    pass


def emit_table(header, rows, fmt: str, out=None) -> str:
    out = out or sys.stdout
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        text = buf.getvalue()
    else:
        cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
        widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
        text = "".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) + "\n" for r in cells)
    out.write(text)
    return text


def _pct(x: float) -> str:
    return f"{100 * x:.1f}"


# --- loaders -------------------------------------------------------------------

def load_net(args):
    return read_netspec(args.net) if args.net else reference_network()


def load_weights(args, net):
    if args.weights:
        return read_weights(args.weights)
    return reference_weights(net, args.seed)


def load_input(args, net):
    if args.input:
        arr, _kind = read_tensor(args.input)
        return arr
    return random_image(net.input_shape, args.seed)


def memory_config(args) -> df.MemoryConfig:
    kw = {"clock_hz": args.clock}
    if args.input_sram_bits:
        kw["input_sram_bits"] = args.input_sram_bits
    return df.MemoryConfig(**kw)


# --- commands ------------------------------------------------------------------

def cmd_init(args) -> int:
    """Write the reference network, seeded weights and a seeded input image."""
    if not args.out:
        raise UsageError("init needs --out DIR")
    os.makedirs(args.out, exist_ok=True)
    net = load_net(args)
    atomic_write(os.path.join(args.out, "net.txt"), format_netspec(net).encode())
    write_weights(os.path.join(args.out, "weights.snnw"), reference_weights(net, args.seed))
    write_tensor(os.path.join(args.out, "input.snnt"), random_image(net.input_shape, args.seed),
                 kind=1)
    print(f"wrote net.txt, weights.snnw, input.snnt to {args.out}")
    return EXIT_OK


def cmd_prune(args) -> int:
    if args.rate is None or not 0 <= args.rate < 1:
        raise UsageError(f"--rate must lie in [0, 1), got {args.rate}")
    if not args.weights or not args.out:
        raise UsageError("prune needs --weights IN and --out PATH")
    layers = read_weights(args.weights)
    pruned, reports = prune_network(layers, args.rate, args.mode)
    write_weights(args.out, pruned, "bitmask")
    rows = [(r.layer_id, f"{r.k}x{r.k}", r.total, r.nonzero_before, r.nonzero_after,
             f"{r.density:.3f}") for r in reports]
    total = sum(r.total for r in reports)
    kept = sum(r.nonzero_after for r in reports)
    rows.append(("all", "-", total, sum(r.nonzero_before for r in reports), kept,
                 f"{kept / total:.3f}" if total else "0.000"))
    emit_table(("layer", "kernel", "weights", "nonzero_before", "nonzero_after", "density"),
               rows, args.format)
    return EXIT_OK


def cmd_infer(args) -> int:
    if not args.out:
        raise UsageError("infer needs --out DIR")
    net = load_net(args)
    weights = load_weights(args, net)
    x = load_input(args, net)
    mem = memory_config(args)
    result = network_forward(x, net, weights, mem=mem)
    predicted = df.ktbc_schedule(result.stages, weights, mem.clock_hz).cycles
    if predicted != result.report.cycles:
        raise InvariantViolation(
            f"executed {result.report.cycles} cycles but the schedule predicts {predicted}")
    os.makedirs(args.out, exist_ok=True)
    for st, out in zip(result.stages, result.outputs):
        path = os.path.join(args.out, f"stage_{st.index:02d}_{st.name}.snnt")
        write_tensor(path, out, KIND_I32 if st.kind == "output" else 0)
    atomic_write(os.path.join(args.out, "report.txt"), result.report.to_text().encode())
    atomic_write(os.path.join(args.out, "report.csv"), result.report.to_csv().encode())
    sys.stdout.write(result.report.to_csv() if args.format == "csv" else result.report.to_text())
    return EXIT_OK


def cmd_compress_report(args) -> int:
    if not args.weights:
        raise UsageError("compress-report needs --weights")
    layers = read_weights(args.weights)
    rows, totals = [], dict.fromkeys(FORMATS, 0)
    for lw in layers:
        bits = {f: storage_bits(lw.q, f) for f in FORMATS}
        for f in FORMATS:
            totals[f] += bits[f]
        rows.append((lw.layer_id, f"{lw.k}x{lw.k}", lw.out_c * lw.in_c, lw.nnz,
                     bits["dense"], bits["bitmask"], bits["csr"]))
    if layers:
        rows.append(("total", "-", sum(r[2] for r in rows), sum(r[3] for r in rows),
                     totals["dense"], totals["bitmask"], totals["csr"]))
    emit_table(("layer", "kernel", "kernels", "nonzero", "dense_bits", "bitmask_bits", "csr_bits"),
               rows, args.format)
    if layers and args.format == "text":
        print(f"bitmask saves {_pct(1 - totals['bitmask'] / totals['dense'])}% vs dense, "
              f"{_pct(1 - totals['bitmask'] / totals['csr'])}% vs CSR")
    return EXIT_OK


def _analyze_miout(args, net, weights, x) -> None:
    planned = mixed_timestep_plan(net, args.cut)
    result = network_forward(x, planned, weights, mem=memory_config(args))
    rows = []
    for st in result.stages:
        inp = result.stage_input(st.index, x)
        if st.kind == "encode" or inp.shape[0] < 2:
            continue
        _, mean = miout(inp)
        rows.append((st.index, st.name, inp.shape[0], f"{mean:.4f}"))
    emit_table(("stage", "name", "T", "miout"), rows, args.format)


def _analyze_parallelism(args, net, weights) -> None:
    workloads = nnz_workload(weights)
    spatial = sum(df.spatial_latency(w) for w in workloads)
    rows = [("spatial", 1, 1, 0, spatial, "1.000")]
    for ic in (2, 4, 8):
        for depth in (1, 2, 4, 8, 16):
            org = df.org_for(ic_par=ic, fifo_depth=depth)
            lat = sum(df.parallelism_latency(org, w) for w in workloads)
            rows.append(("input", ic, 1, depth, lat, f"{lat / spatial:.3f}" if spatial else "-"))
    for oc in (2, 4, 8):
        org = df.org_for(oc_par=oc)
        lat = sum(df.parallelism_latency(org, w) for w in workloads)
        rows.append(("output", 1, oc, 0, lat, f"{lat / spatial:.3f}" if spatial else "-"))
    emit_table(("scheme", "ic_par", "oc_par", "fifo_depth", "latency", "relative"), rows,
               args.format)


def _analyze_traffic(args, net, weights) -> None:
    mem = memory_config(args)
    stages = expand(net)
    traffic = df.dram_traffic(stages, weights, mem)
    rows = [(t.name, t.tile_footprint_bits, t.refetch, t.in_bits, t.out_bits, t.w_bits)
            for t in traffic]
    tot = df.traffic_totals(traffic)
    total_bits = sum(tot.values())
    rows.append(("total", "-", "-", tot["dram_bits_in"], tot["dram_bits_out"], tot["dram_bits_w"]))
    emit_table(("stage", "tile_footprint_bits", "refetch", "in_bits", "out_bits", "w_bits"),
               rows, args.format)
    if args.format == "text":
        print(f"total {total_bits} bits, DRAM energy {df.dram_energy(total_bits):.6e} J/frame, "
              f"dense ops {op_count(stages)}, sparse ops {op_count(stages, weights, 'sparse')}")


def cmd_analyze(args) -> int:
    net = load_net(args)
    weights = load_weights(args, net)
    if args.rate is not None:
        if not 0 <= args.rate < 1:
            raise UsageError(f"--rate must lie in [0, 1), got {args.rate}")
        weights, _ = prune_network(weights, args.rate)
    if args.mode == "miout":
        _analyze_miout(args, net, weights, load_input(args, net))
    elif args.mode == "parallelism":
        _analyze_parallelism(args, net, weights)
    elif args.mode == "traffic":
        _analyze_traffic(args, net, weights)
    else:
        raise UsageError(f"unknown analysis mode {args.mode!r}")
    return EXIT_OK


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--net", help="network description file (default: reference net)")
    common.add_argument("--weights", help="SNNW weight file")
    common.add_argument("--input", help="SNNT input tensor")
    common.add_argument("--out", help="output directory (file path for prune)")
    common.add_argument("--rate", type=float, help="pruning rate in [0, 1)")
    common.add_argument("--seed", type=int, default=0, help="seed for synthetic weights/inputs")
    common.add_argument("--clock", type=float, default=df.DEFAULT_CLOCK_HZ, help="clock in Hz")
    common.add_argument("--input-sram-bits", type=int, default=None)
    common.add_argument("--format", choices=("text", "csv"), default="text")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sparsesnn", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("init", parents=[common], help="write reference net, weights and input")
    p = sub.add_parser("prune", parents=[common], help="magnitude-prune 3x3 layers")
    p.add_argument("--mode", choices=("layer", "global"), default="layer")
    sub.add_parser("infer", parents=[common], help="run the network and report costs")
    sub.add_parser("compress-report", parents=[common], help="dense / bit-mask / CSR sizes")
    p = sub.add_parser("analyze", parents=[common], help="mIoUT, parallelism or traffic study")
    p.add_argument("--mode", choices=("miout", "parallelism", "traffic"), required=True)
    p.add_argument("--cut", default="C1", help="time-step cut point for the mIoUT run")
    return parser


COMMANDS = {"init": cmd_init, "prune": cmd_prune, "infer": cmd_infer,
            "compress-report": cmd_compress_report, "analyze": cmd_analyze}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (FormatError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
