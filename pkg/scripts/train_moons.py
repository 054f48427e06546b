#!/usr/bin/env python3
"""Train a small tanh network on the two-moons task with the partitioned
second-order method and print the loss trajectory."""

import argparse

import numpy as np

from grouphess.optimizers import StepConfig, run
from grouphess.partition import canonical_partition
from grouphess.problems import MlpSpec, make_mlp, mlp_labels, synth_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--damping", type=float, default=0.3)
    parser.add_argument("--seed", type=int, default=2)
    parser.add_argument("--n", type=int, default=100)
    args = parser.parse_args()

    data = synth_dataset("moons", args.n, seed=0)
    spec = MlpSpec(widths=(2, 8, 8, 8, 2), seed=args.seed)
    f, theta0 = make_mlp(spec, data)
    part = canonical_partition(theta0.shapes, mlp_labels(spec.widths))
    cfg = StepConfig(damping=args.damping, max_iterations=args.steps, grad_tolerance=1e-10)

    result = run(f, theta0, "partitioned", part, cfg)
    for tr in result.traces:
        if tr.iteration % 25 == 0 or tr.iteration == len(result.traces) - 1:
            print(f"step {tr.iteration:4d}  loss {tr.loss_after:.3e}  "
                  f"|g| {tr.grad_norm:.2e}  {tr.status}")
    best = min(tr.loss_after for tr in result.traces)
    print(f"\n{len(result.traces)} steps ({result.termination}), best loss {best:.3e}, "
          f"S={part.size} groups over {theta0.size} parameters")
    eta = np.array(result.traces[-1].eta)
    print("final per-group rates:", np.array2string(eta, precision=3))


if __name__ == "__main__":
    main()
