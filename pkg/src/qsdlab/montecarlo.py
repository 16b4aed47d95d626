"""Conditioned-on-survival estimators.

Three process kinds share one interface (``rate``, ``step``, ``copy``, ``key``,
``from_key``, ``size``): the integer branching chain, the tree-valued BPG and
the BRW. States are tabulated by canonical key (encoding string, canonical
config JSON, or the integer itself).
"""

from __future__ import annotations

import heapq
import json
import math
from bisect import bisect_right
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import bpg, brw
from .offspring import OffspringDistribution
from .rng import make_rng

ESS_FLOOR = 1000
CHUNK_SIZE = 10_000


class AllAbsorbed(RuntimeError):
    pass


# -- process specifications ------------------------------------------------

@dataclass(frozen=True)
class BranchingSpec:
    """Population size of a branching process (the common projection)."""

    offspring: OffspringDistribution

    def rate(self, n):
        return n * self.offspring.event_rate

    def step(self, n, rng):
        return n - 1 + self.offspring.sample(rng)

    def is_absorbed(self, n):
        return n == 0

    def copy(self, n):
        return n

    def key(self, n):
        return n

    def from_key(self, key):
        return int(key)

    def size(self, n):
        return n


@dataclass(frozen=True)
class BpgSpec:
    offspring: OffspringDistribution

    def rate(self, tree):
        return len(tree.leaves) * self.offspring.event_rate

    def step(self, tree, rng):
        leaves = tree.leaves
        leaf = leaves[int(rng.random() * len(leaves))]
        k = self.offspring.sample(rng)
        if k:
            tree.branch(leaf, k)
        else:
            tree.kill(leaf)
        return tree

    def is_absorbed(self, tree):
        return tree.root is None

    def copy(self, tree):
        return tree.copy()

    def key(self, tree):
        return bpg.canonical_encoding(tree)

    def from_key(self, key):
        return bpg.RootedTree.from_encoding(key)

    def size(self, tree):
        return len(tree.leaves)


@dataclass(frozen=True)
class BrwSpec:
    lam: float
    d: int = 1

    def rate(self, cfg):
        return (1 + self.lam) * len(cfg.ids)

    def step(self, cfg, rng):
        n = len(cfg.ids)
        i = int(rng.random() * n)
        if rng.random() * (1 + self.lam) < self.lam:
            axis = int(rng.random() * 2 * self.d)
            site = list(cfg.sites[i])
            site[axis // 2] += 1 if axis % 2 == 0 else -1
            cfg._add(cfg.next_id, tuple(site))
            cfg.next_id += 1
        else:
            cfg._remove_at(i)
        return cfg

    def is_absorbed(self, cfg):
        return not cfg.ids

    def copy(self, cfg):
        return cfg.copy()

    def key(self, cfg):
        return brw.canonical_key(cfg)

    def from_key(self, key):
        return brw.LatticeConfig.from_json(key)

    def size(self, cfg):
        return len(cfg.ids)


def evolve(spec, state, t: float, rng):
    """Run ``state`` (mutated) forward by ``t``; returns the final state."""
    now = 0.0
    while not spec.is_absorbed(state):
        now += rng.expovariate(spec.rate(state))
        if now > t:
            break
        state = spec.step(state, rng)
    return state


# -- empirical distributions -----------------------------------------------

@dataclass
class EmpiricalDistribution:
    counts: Counter = field(default_factory=Counter)

    @classmethod
    def from_samples(cls, samples: Iterable) -> "EmpiricalDistribution":
        return cls(Counter(samples))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def probabilities(self) -> dict:
        n = self.total
        return {k: c / n for k, c in self.counts.items()}

    def prob(self, key) -> float:
        n = self.total
        return self.counts.get(key, 0) / n if n else 0.0

    def marginal(self, fn: Callable) -> "EmpiricalDistribution":
        out = Counter()
        for k, c in self.counts.items():
            out[fn(k)] += c
        return EmpiricalDistribution(out)

    def merge(self, other: "EmpiricalDistribution") -> "EmpiricalDistribution":
        return EmpiricalDistribution(self.counts + other.counts)

    def mean(self, fn: Callable = lambda k: k) -> float:
        n = self.total
        return sum(fn(k) * c for k, c in self.counts.items()) / n

    def to_dict(self) -> dict:
        return {"total": self.total,
                "counts": {str(k): c for k, c in sorted(self.counts.items(), key=lambda kv: str(kv[0]))}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _as_probabilities(p) -> dict:
    if isinstance(p, EmpiricalDistribution):
        out = p.probabilities()
    elif isinstance(p, np.ndarray):
        out = {i + 1: float(x) for i, x in enumerate(p) if x != 0}
    else:
        out = dict(p)
    total = sum(out.values())
    if not total > 0:
        raise ValueError("empty distribution")
    return {k: v / total for k, v in out.items()}


def tv_distance(p, q) -> float:
    """Total variation between two laws; arrays are read as laws on 1..N."""
    p, q = _as_probabilities(p), _as_probabilities(q)
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def tv_stderr(p: EmpiricalDistribution, q=None) -> float:
    """Rough standard error of a plug-in TV, from per-cell multinomial variances."""
    var = sum(x * (1 - x) for x in p.probabilities().values()) / max(p.total, 1)
    if isinstance(q, EmpiricalDistribution):
        var += sum(x * (1 - x) for x in q.probabilities().values()) / max(q.total, 1)
    return 0.5 * math.sqrt(var)


# -- direct estimation -----------------------------------------------------

@dataclass
class DirectEstimate:
    distribution: EmpiricalDistribution
    replicas: int

    @property
    def survivors(self) -> int:
        return self.distribution.total

    @property
    def survival_fraction(self) -> float:
        return self.survivors / self.replicas

    @property
    def reliable(self) -> bool:
        return self.survivors >= ESS_FLOOR


def _chunks(replicas: int, chunk_size: int):
    return [(i, min(chunk_size, replicas - i * chunk_size))
            for i in range(math.ceil(replicas / chunk_size))]


def _map_chunks(fn, args_list, workers):
    if workers and workers > 1 and len(args_list) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, *zip(*args_list)))
    return [fn(*a) for a in args_list]


def _direct_chunk(spec, initial, t, seed, chunk, n, key):
    rng = make_rng(seed, chunk)
    key = key or spec.key
    out = Counter()
    for _ in range(n):
        state = evolve(spec, spec.copy(initial), t, rng)
        if not spec.is_absorbed(state):
            out[key(state)] += 1
    return out


def yaglom_estimate_direct(spec, initial, t: float, replicas: int, seed: int, *,
                           key: Callable | None = None, workers: int = 1,
                           chunk_size: int = CHUNK_SIZE) -> DirectEstimate:
    """Tabulate the states at ``t`` of the replicas that survive.

    Chunk ``c`` of ``chunk_size`` replicas always uses stream ``(seed, c)``,
    so results do not depend on ``workers``.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    args = [(spec, initial, t, seed, c, n, key) for c, n in _chunks(replicas, chunk_size)]
    counts = Counter()
    for part in _map_chunks(_direct_chunk, args, workers):
        counts.update(part)
    if not counts:
        raise AllAbsorbed(f"all {replicas} replicas absorbed by t={t}")
    return DirectEstimate(EmpiricalDistribution(counts), replicas)


# -- Fleming-Viot --------------------------------------------------------

@dataclass
class FvResult:
    distribution: EmpiricalDistribution
    snapshots: dict
    resamples: int
    n_particles: int


def fleming_viot(spec, initial, t: float, n_particles: int, seed: int, *,
                 snapshot_times: Iterable[float] = (), key: Callable | None = None) -> FvResult:
    """N independent copies; an absorbed copy jumps onto a uniform other copy.

    Each particle keeps its own exponential clock in a heap. After a
    resampling the new copy draws a fresh clock (memorylessness makes this
    exact). ``initial`` is one state or a sequence of ``n_particles`` states.
    """
    if n_particles < 2:
        raise ValueError("Fleming-Viot needs at least two particles")
    rng = make_rng(seed, 0)
    key = key or spec.key
    if isinstance(initial, list):
        if len(initial) != n_particles:
            raise ValueError("need one initial state per particle")
        states = [spec.copy(s) for s in initial]
    else:
        states = [spec.copy(initial) for _ in range(n_particles)]
    expo, unif = rng.expovariate, rng.random
    heap = [(expo(spec.rate(s)), i) for i, s in enumerate(states)]
    heapq.heapify(heap)
    pending = sorted(float(s) for s in snapshot_times if s <= t)
    snapshots = {}
    resamples = 0

    def tabulate():
        return EmpiricalDistribution(Counter(key(s) for s in states))

    while True:
        when, i = heap[0]
        while pending and pending[0] < when:
            snapshots[pending.pop(0)] = tabulate()
        if when > t:
            break
        state = spec.step(states[i], rng)
        if spec.is_absorbed(state):
            j = int(unif() * (n_particles - 1))
            if j >= i:
                j += 1
            state = spec.copy(states[j])
            resamples += 1
        states[i] = state
        heapq.heapreplace(heap, (when + expo(spec.rate(state)), i))
    final = tabulate()
    for s in pending:
        snapshots[s] = final
    if t in snapshots:
        snapshots[t] = final
    return FvResult(final, snapshots, resamples, n_particles)


# -- branching-count events ----------------------------------------------

def count_g_events(path: Iterable) -> int:
    """Largest ``k`` such that the size path visits 1, 2, 1, 2, ... (2k visits).

    ``path`` is the sequence of sizes of a piecewise-constant path (or of
    ``(time, size)`` pairs); each listed value is held for positive time.
    """
    count = 0
    waiting_two = False
    for item in path:
        n = item[1] if isinstance(item, tuple) else item
        if waiting_two:
            if n == 2:
                count += 1
                waiting_two = False
        elif n == 1:
            waiting_two = True
    return count


@dataclass
class GEventEstimate:
    times: list
    survivors: list
    # hits[t_index][k-1] = number of survivors at t with G_t(k)
    hits: list
    replicas: int

    def conditional(self, k: int) -> list:
        return [h[k - 1] / s if s else float("nan") for h, s in zip(self.hits, self.survivors)]


def _g_chunk(offspring, times, k_max, seed, chunk, n):
    rng = make_rng(seed, chunk)
    rate = offspring.event_rate
    sample = offspring.sample
    expo = rng.expovariate
    n_t = len(times)
    survivors = [0] * n_t
    hits = [[0] * k_max for _ in range(n_t)]
    horizon = times[-1]
    for _ in range(n):
        size, now, count, waiting_two = 1, 0.0, 0, True
        ti = 0
        while True:
            nxt = now + expo(rate * size) if size else math.inf
            while ti < n_t and times[ti] < nxt:
                if size:
                    survivors[ti] += 1
                    row = hits[ti]
                    for k in range(min(count, k_max)):
                        row[k] += 1
                ti += 1
            if ti == n_t or size == 0:
                break
            now = nxt
            size += sample(rng) - 1
            if waiting_two:
                if size == 2:
                    count += 1
                    waiting_two = False
            elif size == 1:
                waiting_two = True
    return survivors, hits


def g_event_estimate(offspring: OffspringDistribution, times, k_max: int, replicas: int,
                     seed: int, *, workers: int = 1, chunk_size: int = 50_000) -> GEventEstimate:
    """Direct estimate of ``P(G_t(k) | alive at t)`` from size 1, on a time grid."""
    times = sorted(float(x) for x in times)
    args = [(offspring, times, k_max, seed, c, n) for c, n in _chunks(replicas, chunk_size)]
    surv = [0] * len(times)
    hits = [[0] * k_max for _ in times]
    for s, h in _map_chunks(_g_chunk, args, workers):
        for i in range(len(times)):
            surv[i] += s[i]
            for k in range(k_max):
                hits[i][k] += h[i][k]
    return GEventEstimate(times, surv, hits, replicas)


# -- walker statistics ----------------------------------------------------

@dataclass
class WalkerEstimate:
    t: float
    replicas: int
    survivors: int
    jump_counts: Counter
    direction_counts: Counter
    pair_counts: Counter
    separation_violations: int = 0

    def prob_at_least(self, m: int) -> float:
        return sum(c for j, c in self.jump_counts.items() if j >= m) / self.survivors


def _walker_chunk(lam, d, t, initial_json, seed, chunk, n):
    rng = make_rng(seed, chunk)
    config0 = brw.LatticeConfig.from_json(initial_json)
    survivors = 0
    jumps, dirs, pairs = Counter(), Counter(), Counter()
    violations = 0
    for _ in range(n):
        cfg, gen = brw.simulate_brw(config0, lam, t, rng)
        if cfg.is_empty:
            continue
        survivors += 1
        flags = gen.survival_flags(t)
        roots = sorted(p for p in gen.initial if flags[p])
        paths = [brw.walker_path(gen, x, t, flags) for x in roots]
        # the first surviving ancestor's walker feeds the jump statistics
        first = paths[0]
        jumps[first.n_jumps] += 1
        steps = [j[3] for j in first.jumps]
        dirs.update(steps)
        pairs.update(zip(steps, steps[1:]))
        if len(paths) >= 2:
            diam = brw.diameter(cfg)
            finals = [p.final_site for p in paths]
            for a in range(len(finals)):
                for b in range(a + 1, len(finals)):
                    if brw.linf(finals[a], finals[b]) > diam:
                        violations += 1
    return survivors, jumps, dirs, pairs, violations


def walker_jump_estimate(lam: float, t: float, replicas: int, seed: int, *,
                         initial: brw.LatticeConfig | None = None, d: int = 1,
                         workers: int = 1, chunk_size: int = 20_000) -> WalkerEstimate:
    """Jumps of the walker of the first surviving initial particle, over surviving runs."""
    initial = initial or brw.LatticeConfig.single(d)
    args = [(lam, initial.d, t, initial.to_json(), seed, c, n) for c, n in _chunks(replicas, chunk_size)]
    est = WalkerEstimate(t, replicas, 0, Counter(), Counter(), Counter())
    for s, j, dr, pr, v in _map_chunks(_walker_chunk, args, workers):
        est.survivors += s
        est.jump_counts.update(j)
        est.direction_counts.update(dr)
        est.pair_counts.update(pr)
        est.separation_violations += v
    if not est.survivors:
        raise AllAbsorbed(f"all {replicas} replicas absorbed by t={t}")
    return est


# -- quasi-stationarity check ----------------------------------------------

def _fixed_point_chunk(spec, keys, cum, s, seed, chunk, n, key):
    rng = make_rng(seed, chunk)
    key = key or spec.key
    out = Counter()
    for _ in range(n):
        k0 = keys[min(bisect_right(cum, rng.random()), len(keys) - 1)]
        state = evolve(spec, spec.from_key(k0), s, rng)
        if not spec.is_absorbed(state):
            out[key(state)] += 1
    return out


def qsd_fixed_point_check(spec, nu_hat, s: float, replicas: int, seed: int, *,
                          key: Callable | None = None, workers: int = 1,
                          chunk_size: int = CHUNK_SIZE) -> tuple[float, DirectEstimate]:
    """Start from ``nu_hat``, evolve for ``s``, condition on survival; TV to ``nu_hat``.

    ``nu_hat`` is an EmpiricalDistribution (at least ``ESS_FLOOR`` samples), a
    mapping key -> probability, or an array read as a law on 1..N.
    """
    if isinstance(nu_hat, EmpiricalDistribution) and nu_hat.total < ESS_FLOOR:
        raise ValueError(f"estimated QSD has only {nu_hat.total} samples")
    probs = _as_probabilities(nu_hat)
    keys = sorted(probs, key=str)
    cum = np.cumsum([probs[k] for k in keys]).tolist()
    args = [(spec, keys, cum, s, seed, c, n, key) for c, n in _chunks(replicas, chunk_size)]
    counts = Counter()
    for part in _map_chunks(_fixed_point_chunk, args, workers):
        counts.update(part)
    if not counts:
        raise AllAbsorbed("every replica absorbed")
    est = DirectEstimate(EmpiricalDistribution(counts), replicas)
    return tv_distance(probs, est.distribution), est


def size_of_encoding(code: str) -> int:
    return bpg.leaf_count_of_encoding(code)


def size_of_config_key(text: str) -> int:
    return sum(json.loads(text)["sites"].values())

