"""DRAM traffic and energy per frame for two input SRAM sizes."""

import argparse

from sparsesnn import dataflow as df
from sparsesnn.model import reference_weights
from sparsesnn.netspec import expand, reference_network
from sparsesnn.weights import prune_network


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rate", type=float, default=0.8)
    args = ap.parse_args()

    net = reference_network()
    stages = expand(net)
    weights, _ = prune_network(reference_weights(net, args.seed), args.rate)
    # the desk-scale net is small, so shrink the SRAM to show the re-fetch effect
    for label, bits in (("tiny (1 KB)", 8 * 1024), ("36 KB", df.input_sram_bits(512, 1)),
                        ("81 KB", df.input_sram_bits(384, 3))):
        tot = df.traffic_totals(df.dram_traffic(stages, weights, df.MemoryConfig(input_sram_bits=bits)))
        total = sum(tot.values())
        print(f"input SRAM {label:12s}: in {tot['dram_bits_in']:>9d}  out {tot['dram_bits_out']:>8d}"
              f"  w {tot['dram_bits_w']:>8d} bits  -> {df.dram_energy(total) * 1e6:8.2f} uJ/frame")


if __name__ == "__main__":
    main()
