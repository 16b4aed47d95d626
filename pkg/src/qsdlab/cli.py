"""``qsd-lab`` command line.

    qsd-lab <experiment> --config cfg.json --seed 7 --out runs/x [--threads 4] [--plots]
    qsd-lab compare runs/a runs/b

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments as ex
from .montecarlo import AllAbsorbed
from .spectral import SpectralError

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsd-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ex.EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, help="u64 seed (overrides the config)")
        p.add_argument("--out", required=True, help="output run directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--plots", action="store_true", help="emit SVG plots")
    p = sub.add_parser("compare", help="z-scores between two runs differing only in seed")
    p.add_argument("run_a")
    p.add_argument("run_b")
    return parser


def _load_config(args) -> ex.ExperimentConfig:
    try:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ex.ConfigError(f"cannot read config: {exc}") from None
    if not isinstance(data, dict):
        raise ex.ConfigError("config must be a JSON object")
    if data.setdefault("experiment", args.command) != args.command:
        raise ex.ConfigError(f"config is for {data['experiment']!r}, not {args.command!r}")
    if args.seed is not None:
        data["seed"] = args.seed
    if "seed" not in data:
        raise ex.ConfigError("a seed is mandatory (--seed or config 'seed')")
    return ex.ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "compare":
        try:
            rows = ex.compare_runs(args.run_a, args.run_b)
        except ex.IncompatibleConfigs as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        flagged = 0
        for r in rows:
            t = "" if r.time is None else f"{r.time:g}"
            mark = " !" if r.flagged else ""
            flagged += r.flagged
            print(f"{r.metric:32s} {t:>8s} {r.value_a:14.6g} {r.value_b:14.6g} z={r.z:8.3f}{mark}")
        print(f"{len(rows)} metrics compared, {flagged} flagged (|z| > 4)")
        return 0
    try:
        cfg = _load_config(args)
        out = ex.run_experiment(cfg, args.out, threads=args.threads, plots=args.plots)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpectralError, AllAbsorbed) as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
