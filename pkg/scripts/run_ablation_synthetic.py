#!/usr/bin/env python3
"""Score ablation (tolerance M x alpha, plus the multiplicative column) on a synthetic dataset."""
import argparse
import math

from mcdock.data import SynthSpec, generate_synthetic
from mcdock.evaluation import ablation_grid, baseline_method, fixed_split
from mcdock.model import ArchitectureSpec, TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--regime", default="noisy", choices=["planted", "dominant", "noisy"])
    ap.add_argument("--n", type=int, default=600)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--m", type=int, default=4)
    ap.add_argument("--noise", type=float, default=0.3)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    ds = generate_synthetic(SynthSpec(args.n, args.d, args.m, args.regime, args.noise, seed=args.seed))
    method = baseline_method(ArchitectureSpec(args.d, args.m, hidden_dims=(64, 32)),
                             TrainConfig(epochs=args.epochs))
    grid = ablation_grid(ds, [1.0, 2.0, math.log(11), 3.0, 5.0], [0.1, 0.3, 0.5, 0.7, 0.9],
                         split=fixed_split(ds), method=method, jobs=args.jobs)
    for key, values in grid.grids.items():
        print(key)
        print("       " + "".join(f"{c:>8s}" for c in grid.column_labels))
        for label, row in zip(grid.row_labels, values):
            print(f"{label:>6s} " + "".join(f"{v:8.2f}" for v in row))
        print()


if __name__ == "__main__":
    main()
