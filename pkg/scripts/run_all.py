"""Run every experiment config in scripts/configs into runs/<name>.

    python scripts/run_all.py --seed 1 [--out runs] [--threads 4] [--plots] [--only yaglom walker]
"""

import argparse
import json
import time
from pathlib import Path

from qsdlab.experiments import ExperimentConfig, read_results, run_experiment

CONFIGS = Path(__file__).resolve().parent / "configs"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--out", default="runs")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--plots", action="store_true")
    parser.add_argument("--only", nargs="*", help="experiment names to run")
    args = parser.parse_args()

    for path in sorted(CONFIGS.glob("*.json")):
        data = json.loads(path.read_text())
        if args.only and data["experiment"] not in args.only:
            continue
        data["seed"] = args.seed
        cfg = ExperimentConfig.from_dict(data)
        start = time.perf_counter()
        out = run_experiment(cfg, Path(args.out) / path.stem, threads=args.threads, plots=args.plots)
        print(f"== {cfg.experiment} ({time.perf_counter() - start:.1f}s) -> {out}")
        for r in read_results(out):
            t = "" if r.time is None else f"t={r.time:g}"
            print(f"   {r.metric:34s} {t:>8s} {r.value:.6g}")


if __name__ == "__main__":
    main()
