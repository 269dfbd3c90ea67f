"""Latency of spatial, input-channel and output-channel PE organisations.

Uses the per-(out, in) nonzero counts of the pruned reference network as the
workload and prints latencies relative to spatial parallelism.
"""

import argparse

from sparsesnn import dataflow as df
from sparsesnn.model import nnz_workload, reference_weights
from sparsesnn.netspec import reference_network
from sparsesnn.weights import prune_network


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--rate", type=float, default=0.8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--drain-rate", type=int, default=1)
    args = ap.parse_args()

    net = reference_network()
    weights, _ = prune_network(reference_weights(net, args.seed), args.rate)
    workloads = nnz_workload(weights)
    spatial = sum(df.spatial_latency(w) for w in workloads)
    print(f"spatial latency: {spatial} cycles per tile")
    print("ic_par  " + "  ".join(f"fifo={d:<3d}" for d in (1, 2, 4, 8, 16)) + "  unbounded")
    for ic in (2, 4, 8):
        cells = []
        for depth in (1, 2, 4, 8, 16, None):
            org = df.org_for(ic, fifo_depth=depth, drain_rate=args.drain_rate)
            lat = sum(df.parallelism_latency(org, w) for w in workloads)
            cells.append(f"{lat / spatial:8.3f}")
        print(f"{ic:6d}  " + "  ".join(cells))
    for oc in (2, 4, 8):
        lat = sum(df.parallelism_latency(df.org_for(oc_par=oc), w) for w in workloads)
        print(f"output-channel x{oc}: {lat / spatial:.3f}")


if __name__ == "__main__":
    main()
