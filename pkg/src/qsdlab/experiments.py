"""Named, seeded experiments and their flat-file outputs.

A run directory holds ``config.json``, ``results.csv`` (one row per
ResultRecord), ``distributions.json`` and, optionally, ``plots/*.svg``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np
from scipy import stats

from . import bpg, brw, montecarlo as mc, spectral
from .offspring import OffspringDistribution, brw_offspring

EXPERIMENTS = (
    "yaglom", "uniqueness-bpg", "uniqueness-brw", "gevents",
    "walker", "qprocess", "spectral", "family",
)

# stderr of a metric with no error estimate; such rows are not z-scored
NO_SE = float("nan")

CSV_COLUMNS = ("config_hash", "experiment", "metric", "time", "value", "stderr", "ess")

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qsd-lab experiment configuration",
    "type": "object",
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "process": {"enum": ["bpg", "brw", "branching"]},
        "offspring": {
            "type": "object",
            "properties": {
                "pmf": {"type": "object", "patternProperties": {"^[0-9]+$": {"type": "number", "minimum": 0}},
                        "additionalProperties": False},
                "tail_ratio": {"type": ["number", "null"]},
                "event_rate": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["pmf"],
        },
        "lambda": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "d": {"type": "integer", "minimum": 1},
        "times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "replicas": {"type": "integer", "minimum": 1},
        "particles": {"type": "integer", "minimum": 2},
        "truncation": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "initial": {"type": "array"},
        "k_max": {"type": "integer", "minimum": 1},
        "theta": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "method": {"enum": ["fv", "direct"]},
    },
    "required": ["experiment", "seed"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


class IncompatibleConfigs(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    process: str = "bpg"
    offspring: dict | None = None
    lam: float | None = None
    d: int = 1
    times: list = field(default_factory=lambda: [1.0])
    replicas: int = 100_000
    particles: int = 10_000
    truncation: int = 200
    initial: list | None = None
    k_max: int = 3
    theta: list | None = None
    horizon: float = 1e5
    method: str = "fv"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(exc.message) from None
        times = [float(x) for x in data.get("times", [1.0])]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("time grid must be strictly increasing")
        kwargs = {k: v for k, v in data.items() if k != "lambda"}
        kwargs["times"] = times
        if "lambda" in data:
            kwargs["lam"] = data["lambda"]
        cfg = cls(**kwargs)
        if cfg.offspring is None and cfg.lam is None:
            if cfg.experiment not in ("uniqueness-brw", "walker") and cfg.process != "brw":
                raise ConfigError("need either 'offspring' or 'lambda'")
        if cfg.offspring is not None:
            try:
                cfg.offspring_law()
            except ValueError as exc:
                raise ConfigError(f"offspring: {exc}") from None
        return cfg

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if v is not None and k != "lam"}
        if self.lam is not None:
            out["lambda"] = self.lam
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def offspring_law(self) -> OffspringDistribution:
        if self.offspring is not None:
            return OffspringDistribution.from_dict(self.offspring)
        return brw_offspring(self.lam if self.lam is not None else 0.5)

    @property
    def lam_or_default(self) -> float:
        return self.lam if self.lam is not None else 0.5


@dataclass
class ResultRecord:
    config_hash: str
    experiment: str
    metric: str
    time: float | None
    value: float
    stderr: float
    ess: int

    def row(self) -> list:
        def fmt(x):
            if x is None:
                return ""
            return repr(float(x)) if isinstance(x, float) else str(x)
        return [self.config_hash, self.experiment, self.metric, fmt(self.time),
                fmt(float(self.value)), fmt(float(self.stderr)), str(int(self.ess))]


class _Recorder:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.hash = cfg.config_hash()
        self.records: list[ResultRecord] = []
        self.distributions: dict = {}

    def add(self, metric, value, time=None, stderr=0.0, ess=0):
        self.records.append(ResultRecord(self.hash, self.cfg.experiment, metric, time,
                                         float(value), float(stderr), int(ess)))


def _parse_tree(item) -> bpg.RootedTree:
    return bpg.RootedTree.from_encoding(item)


def _parse_config(item, d) -> brw.LatticeConfig:
    occ = {tuple(json.loads(k)): int(v) for k, v in item.items()}
    return brw.LatticeConfig.from_occupancy(occ, d)


def _spec_and_initial(cfg: ExperimentConfig, item=None):
    if cfg.process == "bpg":
        return mc.BpgSpec(cfg.offspring_law()), _parse_tree(item or "()"), mc.size_of_encoding
    if cfg.process == "brw":
        init = _parse_config(item, cfg.d) if item else brw.LatticeConfig.single(cfg.d)
        return mc.BrwSpec(cfg.lam_or_default, cfg.d), init, mc.size_of_config_key
    return mc.BranchingSpec(cfg.offspring_law()), int(item or 1), int


def _projection_law(cfg: ExperimentConfig) -> OffspringDistribution:
    if cfg.process == "brw":
        return brw_offspring(cfg.lam_or_default)
    return cfg.offspring_law()


def _run_spectral(cfg, rec, threads):
    kernel = spectral.build_kernel(cfg.offspring_law(), cfg.truncation)
    data = spectral.compute_spectral(kernel)
    rec.add("alpha", data.alpha)
    rec.add("residual_left_l1", data.residuals["left_l1"])
    rec.add("residual_right_sup", data.residuals["right_sup_rel"])
    rec.add("survival_limit_1", data.survival_limit()[0])
    for j in range(1, min(10, kernel.N) + 1):
        rec.add(f"nu_{j}", data.nu[j - 1])
        rec.add(f"h_over_j_{j}", data.h[j - 1] / j)
    for t in cfg.times:
        surv = spectral.survival_probability(kernel, 1, t)
        rec.add("scaled_survival_1", math.exp(data.alpha * t) * surv, time=t)
    rec.distributions["spectral"] = json.loads(data.to_json())


def _run_family(cfg, rec, threads):
    kernel = spectral.build_kernel(cfg.offspring_law(), cfg.truncation)
    data = spectral.compute_spectral(kernel)
    rec.add("alpha", data.alpha)
    for theta in cfg.theta or [0.5 * data.alpha, data.alpha, 1.5 * data.alpha]:
        member = spectral.qsd_family(kernel, theta)
        tag = f"theta={theta:g}"
        rec.add(f"valid[{tag}]", float(member.valid))
        rec.add(f"tail_mass[{tag}]", member.tail_mass)
        if member.valid:
            rec.add(f"tv_to_nu[{tag}]", mc.tv_distance(member.weights, data.nu))
            rec.add(f"mean[{tag}]", float(member.weights @ kernel.states))
        rec.distributions[tag] = member.weights.tolist()


def _run_yaglom(cfg, rec, threads):
    spec, initial, size_of = _spec_and_initial(cfg, (cfg.initial or [None])[0])
    kernel = spectral.build_kernel(_projection_law(cfg), cfg.truncation)
    data = spectral.compute_spectral(kernel)
    start = np.zeros(kernel.N)
    start[spec.size(spec.copy(initial)) - 1] = 1.0
    if cfg.method == "fv":
        res = mc.fleming_viot(spec, initial, cfg.times[-1], cfg.particles, cfg.seed,
                              snapshot_times=cfg.times)
        snaps = [res.snapshots[t] for t in cfg.times]
    else:
        snaps = [mc.yaglom_estimate_direct(spec, initial, t, cfg.replicas, cfg.seed + i,
                                           workers=threads).distribution
                 for i, t in enumerate(cfg.times)]
    prev = None
    for t, law in zip(cfg.times, snaps):
        sizes = law.marginal(size_of)
        exact = spectral.conditioned_law(kernel, start, t)
        rec.add("tv_size_to_nu", mc.tv_distance(sizes, data.nu), t, mc.tv_stderr(sizes), law.total)
        rec.add("tv_size_to_exact", mc.tv_distance(sizes, exact), t, mc.tv_stderr(sizes), law.total)
        rec.add("exact_tv_to_nu", mc.tv_distance(exact, data.nu), t)
        m = sizes.mean()
        sd = math.sqrt(max(sizes.mean(lambda k: k * k) - m * m, 0.0))
        rec.add("mean_size", m, t, sd / math.sqrt(law.total), law.total)
        if prev is not None:
            rec.add("tv_to_previous", mc.tv_distance(law, prev), t, mc.tv_stderr(law, prev), law.total)
        prev = law
        rec.distributions[f"t={t:g}"] = law.to_dict()


def _run_uniqueness(cfg, rec, threads):
    if cfg.experiment == "uniqueness-bpg":
        cfg = replace(cfg, process="bpg")
        items = cfg.initial or ["()", "((()))"]
    else:
        cfg = replace(cfg, process="brw")
        items = cfg.initial or [{"[0]": 1}, {"[0]": 1, "[2]": 1}]
    if len(items) != 2:
        raise ConfigError("uniqueness experiments compare exactly two initial states")
    laws = []
    for i, item in enumerate(items):
        spec, initial, _ = _spec_and_initial(cfg, item)
        res = mc.fleming_viot(spec, initial, cfg.times[-1], cfg.particles, cfg.seed + i,
                              snapshot_times=cfg.times)
        laws.append(res.snapshots)
    for t in cfg.times:
        a, b = laws[0][t], laws[1][t]
        rec.add("tv_between", mc.tv_distance(a, b), t, mc.tv_stderr(a, b), min(a.total, b.total))
        rec.distributions[f"t={t:g}"] = [a.to_dict(), b.to_dict()]


def _run_gevents(cfg, rec, threads):
    law = cfg.offspring_law()
    est = mc.g_event_estimate(law, cfg.times, cfg.k_max, cfg.replicas, cfg.seed, workers=threads)
    kernel = spectral.build_kernel(law, min(cfg.truncation, 80))
    for k in range(1, cfg.k_max + 1):
        for t, p, s in zip(est.times, est.conditional(k), est.survivors):
            se = math.sqrt(p * (1 - p) / s) if s else float("nan")
            rec.add(f"p_g{k}_given_survival", p, t, se, s)
            done, alive = spectral.g_event_probability(kernel, k, t)
            rec.add(f"exact_g{k}_given_survival", done / alive, t)


def _run_walker(cfg, rec, threads):
    initial = _parse_config(cfg.initial[0], cfg.d) if cfg.initial else None
    for i, t in enumerate(cfg.times):
        est = mc.walker_jump_estimate(cfg.lam_or_default, t, cfg.replicas, cfg.seed + i,
                                      initial=initial, d=cfg.d, workers=threads)
        for m in range(1, cfg.k_max + 1):
            p = est.prob_at_least(m)
            rec.add(f"p_jumps_ge_{m}", p, t, math.sqrt(p * (1 - p) / est.survivors), est.survivors)
        counts = [est.direction_counts.get(s, 0) for s in brw._neighbours(cfg.d)]
        if sum(counts):
            rec.add("direction_chi2_pvalue", stats.chisquare(counts).pvalue, t, NO_SE, sum(counts))
        rec.add("separation_violations", est.separation_violations, t, 0.0, est.survivors)
        rec.distributions[f"t={t:g}"] = {"jumps": {str(k): v for k, v in sorted(est.jump_counts.items())},
                                         "directions": {str(list(k)): v for k, v in sorted(est.direction_counts.items())}}


def _run_qprocess(cfg, rec, threads):
    from .rng import make_rng
    kernel = spectral.build_kernel(_projection_law(cfg), cfg.truncation)
    data = spectral.compute_spectral(kernel)
    qp = spectral.q_process_kernel(data, kernel)
    pi = qp.stationary()
    nh = data.nu * data.h
    nh /= nh.sum()
    run = spectral.simulate_ctmc(qp.Q, 1, cfg.horizon, make_rng(cfg.seed))
    occ = run.occupation / run.occupation.sum()
    rec.add("tv_stationary_vs_nu_h", mc.tv_distance(pi, nh))
    rec.add("tv_occupation_vs_stationary", mc.tv_distance(occ, pi), cfg.horizon, NO_SE, run.n_jumps)
    n_ret = len(run.return_times)
    mean_ret = float(np.mean(run.return_times)) if n_ret else float("inf")
    se = float(np.std(run.return_times) / math.sqrt(n_ret)) if n_ret > 1 else float("nan")
    rec.add("mean_return_time_1", mean_ret, cfg.horizon, se, n_ret)
    rec.add("kac_return_time_1", 1.0 / (pi[0] * -qp.Q[0, 0]))
    rec.add("max_row_leak", float(np.abs(qp.leak).max()))
    rec.distributions["occupation"] = occ.tolist()
    rec.distributions["stationary"] = pi.tolist()


_RUNNERS = {
    "spectral": _run_spectral,
    "family": _run_family,
    "yaglom": _run_yaglom,
    "uniqueness-bpg": _run_uniqueness,
    "uniqueness-brw": _run_uniqueness,
    "gevents": _run_gevents,
    "walker": _run_walker,
    "qprocess": _run_qprocess,
}


def _plot(records: list[ResultRecord], out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "qsd-lab"
    by_metric: dict = {}
    for r in records:
        if r.time is not None:
            by_metric.setdefault(r.metric, []).append((r.time, r.value, r.stderr))
    out.mkdir(parents=True, exist_ok=True)
    for metric, pts in sorted(by_metric.items()):
        if len(pts) < 2:
            continue
        pts.sort()
        fig, ax = plt.subplots(figsize=(5, 3.5))
        t, v, s = zip(*pts)
        ax.errorbar(t, v, yerr=[x if math.isfinite(x) else 0 for x in s], marker="o")
        ax.set_xlabel("t")
        ax.set_ylabel(metric)
        fig.tight_layout()
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in metric)
        fig.savefig(out / f"{safe}.svg", metadata={"Date": None})
        plt.close(fig)


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int = 1, plots: bool = False) -> Path:
    """Run one experiment and write its run directory; returns the directory."""
    if cfg.experiment not in _RUNNERS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = _Recorder(cfg)
    _RUNNERS[cfg.experiment](cfg, rec, threads)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rec.records:
            writer.writerow(r.row())
    (out / "distributions.json").write_text(json.dumps(rec.distributions, sort_keys=True) + "\n")
    if plots:
        _plot(rec.records, out / "plots")
    return out


def read_results(run_dir) -> list[ResultRecord]:
    rows = []
    with open(Path(run_dir) / "results.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(ResultRecord(row["config_hash"], row["experiment"], row["metric"],
                                     float(row["time"]) if row["time"] else None,
                                     float(row["value"]), float(row["stderr"]), int(row["ess"])))
    return rows


@dataclass
class ComparisonRow:
    metric: str
    time: float | None
    value_a: float
    value_b: float
    z: float

    @property
    def flagged(self) -> bool:
        return not math.isnan(self.z) and abs(self.z) > 4


def compare_runs(dir_a, dir_b) -> list[ComparisonRow]:
    """z-scores per (metric, time) between two runs that differ only in seed."""
    cfg_a = json.loads((Path(dir_a) / "config.json").read_text())
    cfg_b = json.loads((Path(dir_b) / "config.json").read_text())
    strip = lambda c: {k: v for k, v in c.items() if k != "seed"}
    if strip(cfg_a) != strip(cfg_b):
        diff = sorted(k for k in set(cfg_a) | set(cfg_b)
                      if k != "seed" and cfg_a.get(k) != cfg_b.get(k))
        raise IncompatibleConfigs(f"configs differ in {diff}")
    a = {(r.metric, r.time): r for r in read_results(dir_a)}
    b = {(r.metric, r.time): r for r in read_results(dir_b)}
    out = []
    for key in sorted(set(a) & set(b), key=lambda k: (k[0], -1 if k[1] is None else k[1])):
        ra, rb = a[key], b[key]
        diff = ra.value - rb.value
        se = math.hypot(ra.stderr, rb.stderr)
        if diff == 0:
            z = 0.0
        elif math.isnan(se):
            z = math.nan
        elif se > 0:
            z = diff / se
        else:
            z = math.inf if diff > 0 else -math.inf
        out.append(ComparisonRow(key[0], key[1], ra.value, rb.value, z))
    return out
