"""Weight storage of dense, bit-mask and CSR kernels across pruning rates."""

import argparse

from sparsesnn.model import reference_weights
from sparsesnn.netspec import reference_network
from sparsesnn.weights import FORMATS, prune_network, storage_bits


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    net = reference_network()
    base = reference_weights(net, args.seed)
    print("rate  density    dense_bits  bitmask_bits  csr_bits  bm_vs_dense  bm_vs_csr")
    for rate in (0.0, 0.5, 0.7, 0.8, 0.9):
        layers, _ = prune_network(base, rate)
        bits = {f: sum(storage_bits(lw.q, f) for lw in layers) for f in FORMATS}
        nnz = sum(lw.nnz for lw in layers)
        total = sum(lw.q.size for lw in layers)
        print(f"{rate:4.1f}  {nnz / total:7.3f}  {bits['dense']:12d}  {bits['bitmask']:12d}"
              f"  {bits['csr']:8d}  {1 - bits['bitmask'] / bits['dense']:11.1%}"
              f"  {1 - bits['bitmask'] / bits['csr']:9.1%}")


if __name__ == "__main__":
    main()
