"""Exact P(G_t(k) | survival) from one individual, as a function of t.

Uses the augmented size chain, so no sampling is involved. Prints the curve
and the first grid time at which each k reaches ``--level``.

    python scripts/g_event_horizon.py --pmf 0:0.6 2:0.4 --k 1 2 3 --tmax 80
"""

import argparse

import numpy as np

from qsdlab.offspring import validate
from qsdlab.spectral import build_kernel, g_event_probability


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--pmf", nargs="+", default=["0:0.6", "2:0.4"], help="k:p pairs")
    parser.add_argument("--k", nargs="+", type=int, default=[1, 2, 3])
    parser.add_argument("--tmax", type=float, default=80.0)
    parser.add_argument("--step", type=float, default=4.0)
    parser.add_argument("--level", type=float, default=0.9)
    parser.add_argument("--truncation", type=int, default=80)
    args = parser.parse_args()

    pmf = {int(a): float(b) for a, b in (x.split(":") for x in args.pmf)}
    kernel = build_kernel(validate(pmf), args.truncation)
    grid = np.arange(args.step, args.tmax + 1e-9, args.step)
    first = {}
    print("t      " + "  ".join(f"k={k:<6d}" for k in args.k))
    for t in grid:
        vals = []
        for k in args.k:
            joint, alive = g_event_probability(kernel, k, float(t))
            p = joint / alive
            vals.append(p)
            if p >= args.level:
                first.setdefault(k, t)
        print(f"{t:<6g} " + "  ".join(f"{v:.4f}  " for v in vals))
    for k in args.k:
        where = f"t={first[k]:g}" if k in first else f"not within t<={args.tmax:g}"
        print(f"k={k}: reaches {args.level} at {where}")


if __name__ == "__main__":
    main()
