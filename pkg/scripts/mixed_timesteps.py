"""Operation counts and mIoUT for different mixed time-step cut points."""

import argparse

import numpy as np

from sparsesnn.model import miout, network_forward, op_count, random_image, reference_weights
from sparsesnn.netspec import mixed_timestep_plan, reference_network


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rate", type=float, default=0.8)
    args = ap.parse_args()

    net = reference_network()
    weights = reference_weights(net, args.seed)
    img = random_image(net.input_shape, args.seed)
    baseline = op_count(mixed_timestep_plan(net, "C1"))
    print("cut    dense_ops     saving   mean mIoUT of multi-step inputs")
    for cut in ("C1", "C2", "C2B1"):
        plan = mixed_timestep_plan(net, cut)
        ops = op_count(plan)
        res = network_forward(img, plan, weights)
        scores = [miout(res.stage_input(s.index))[1] for s in res.stages
                  if s.kind != "encode" and res.stage_input(s.index).shape[0] > 1]
        mean = np.mean(scores) if scores else float("nan")
        print(f"{cut:5s} {ops:11d}  {1 - ops / baseline:8.1%}   {mean:.3f}")


if __name__ == "__main__":
    main()
