"""Plug-in TV between two independent Fleming-Viot runs of the same law.

The value is pure estimator bias plus noise, so it is the smallest TV any
comparison of tabulated laws can show at that particle count.

    python scripts/plugin_floor.py --process bpg --t 8 --particles 10000 100000
"""

import argparse

from qsdlab.bpg import RootedTree
from qsdlab.brw import LatticeConfig
from qsdlab.montecarlo import BpgSpec, BrwSpec, fleming_viot, size_of_encoding, tv_distance
from qsdlab.offspring import validate


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--process", choices=["bpg", "brw"], default="bpg")
    parser.add_argument("--t", type=float, default=8.0)
    parser.add_argument("--particles", nargs="+", type=int, default=[10_000, 100_000])
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    if args.process == "bpg":
        spec, initial = BpgSpec(validate({0: 0.6, 2: 0.4})), RootedTree.single()
    else:
        spec, initial = BrwSpec(0.5, 1), LatticeConfig.single(1)
    for n in args.particles:
        a = fleming_viot(spec, initial, args.t, n, seed=args.seed).distribution
        b = fleming_viot(spec, initial, args.t, n, seed=args.seed + 1).distribution
        line = f"N={n:<8d} states={len(a.counts):<7d} TV(full law)={tv_distance(a, b):.4f}"
        if args.process == "bpg":
            line += f"  TV(leaf count)={tv_distance(a.marginal(size_of_encoding), b.marginal(size_of_encoding)):.4f}"
        print(line)


if __name__ == "__main__":
    main()
