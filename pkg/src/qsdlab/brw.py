"""Branching random walk on Z^d, modulo translations.

Each particle dies at rate 1 and, at rate ``lam``, places a child on a uniform
nearest neighbour. Particles never move, so a particle's site is fixed for its
whole life; this is what makes the walker construction a pure genealogy replay.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

Site = tuple[int, ...]


class EmptyConfiguration(ValueError):
    pass


class NoSurvivingDescendant(ValueError):
    pass


def _site_key(site: Site) -> str:
    return json.dumps(list(site), separators=(",", ":"))


def _neighbours(d: int) -> list[Site]:
    steps = []
    for i in range(d):
        for s in (1, -1):
            e = [0] * d
            e[i] = s
            steps.append(tuple(e))
    return steps


class LatticeConfig:
    """Particle registry (id -> site) with list storage for uniform picks."""

    __slots__ = ("d", "ids", "sites", "_pos", "next_id")

    def __init__(self, d: int, particles: Mapping[int, Site] | None = None):
        self.d = d
        self.ids: list[int] = []
        self.sites: list[Site] = []
        self._pos: dict[int, int] = {}
        self.next_id = 0
        for pid, site in sorted((particles or {}).items()):
            self._add(pid, tuple(site))
        if self.ids:
            self.next_id = max(self.ids) + 1

    @classmethod
    def from_occupancy(cls, occupancy: Mapping[Site, int], d: int | None = None) -> "LatticeConfig":
        if d is None:
            d = len(next(iter(occupancy)))
        particles = {}
        for site in sorted(occupancy):
            if len(site) != d:
                raise ValueError(f"site {site} is not {d}-dimensional")
            for _ in range(occupancy[site]):
                particles[len(particles)] = tuple(site)
        return cls(d, particles)

    @classmethod
    def single(cls, d: int = 1) -> "LatticeConfig":
        return cls(d, {0: (0,) * d})

    def _add(self, pid: int, site: Site) -> None:
        self._pos[pid] = len(self.ids)
        self.ids.append(pid)
        self.sites.append(site)

    def _remove_at(self, i: int) -> int:
        pid = self.ids[i]
        del self._pos[pid]
        last_id, last_site = self.ids.pop(), self.sites.pop()
        if i < len(self.ids):
            self.ids[i] = last_id
            self.sites[i] = last_site
            self._pos[last_id] = i
        return pid

    @property
    def n_particles(self) -> int:
        return len(self.ids)

    @property
    def is_empty(self) -> bool:
        return not self.ids

    def site_of(self, pid: int) -> Site:
        return self.sites[self._pos[pid]]

    def particles(self) -> dict[int, Site]:
        return dict(zip(self.ids, self.sites))

    def occupancy(self) -> Counter:
        return Counter(self.sites)

    def shifted(self, v: Site) -> "LatticeConfig":
        return LatticeConfig(self.d, {p: tuple(a + b for a, b in zip(s, v))
                                      for p, s in self.particles().items()})

    def copy(self) -> "LatticeConfig":
        c = LatticeConfig.__new__(LatticeConfig)
        c.d = self.d
        c.ids = self.ids[:]
        c.sites = self.sites[:]
        c._pos = self._pos.copy()
        c.next_id = self.next_id
        return c

    def to_json(self) -> str:
        occ = self.occupancy()
        return json.dumps({"d": self.d, "sites": {_site_key(s): occ[s] for s in sorted(occ)}},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LatticeConfig":
        data = json.loads(text)
        occ = {tuple(json.loads(k)): int(v) for k, v in data["sites"].items()}
        if not occ:
            return cls(int(data["d"]))
        return cls.from_occupancy(occ, int(data["d"]))


@dataclass(frozen=True)
class CanonicalConfig:
    """Representative of a translation class: lexicographically first site at 0."""

    d: int
    sites: tuple[tuple[Site, int], ...]

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "sites": {_site_key(s): n for s, n in self.sites}},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CanonicalConfig":
        return canonicalize(LatticeConfig.from_json(text))

    def to_config(self) -> LatticeConfig:
        return LatticeConfig.from_occupancy(dict(self.sites), self.d)

    @property
    def n_particles(self) -> int:
        return sum(n for _, n in self.sites)


def canonicalize(config: LatticeConfig | Mapping[Site, int]) -> CanonicalConfig:
    if isinstance(config, LatticeConfig):
        occ, d = config.occupancy(), config.d
    else:
        occ = Counter({tuple(s): n for s, n in config.items() if n})
        d = len(next(iter(occ))) if occ else 0
    if not occ:
        raise EmptyConfiguration("cannot canonicalize the empty configuration")
    origin = min(occ)
    shifted = sorted((tuple(a - b for a, b in zip(s, origin)), n) for s, n in occ.items())
    return CanonicalConfig(d, tuple(shifted))


def canonical_key(config: LatticeConfig) -> str:
    return canonicalize(config).to_json()


def diameter(config: LatticeConfig | Mapping[Site, int]) -> int:
    """L-infinity diameter of the occupied set."""
    if isinstance(config, LatticeConfig):
        sites = set(config.sites)
    else:
        sites = {tuple(s) for s, n in config.items() if n}
    if not sites:
        raise EmptyConfiguration("the empty configuration has no diameter")
    d = len(next(iter(sites)))
    return max(max(s[i] for s in sites) - min(s[i] for s in sites) for i in range(d))


def linf(a: Site, b: Site) -> int:
    return max(abs(x - y) for x, y in zip(a, b))


class BrwEvent(NamedTuple):
    time: float
    kind: str  # "birth" or "death"
    particle: int
    child: int | None
    site: Site


@dataclass
class BrwGenealogy:
    initial: dict[int, Site]
    events: list[BrwEvent] = field(default_factory=list)

    def births(self) -> dict[int, int]:
        """child id -> parent id."""
        return {e.child: e.particle for e in self.events if e.kind == "birth"}

    def alive_at(self, t: float) -> set[int]:
        alive = set(self.initial)
        for e in self.events:
            if e.time > t:
                break
            if e.kind == "birth":
                alive.add(e.child)
            else:
                alive.discard(e.particle)
        return alive

    def survival_flags(self, t: float) -> dict[int, bool]:
        """Whether each particle has a descendant (itself included) alive at ``t``."""
        events = [e for e in self.events if e.time <= t]
        flags = {p: False for p in self.initial}
        for e in events:
            if e.kind == "birth":
                flags[e.child] = False
        for p in self.alive_at(t):
            flags[p] = True
        # children are born after their parents, so a reverse pass settles them
        for e in reversed(events):
            if e.kind == "birth" and flags[e.child]:
                flags[e.particle] = True
        return flags

    def to_ndjson(self) -> str:
        lines = [json.dumps({"type": "init",
                             "particles": {str(p): list(s) for p, s in self.initial.items()}})]
        for e in self.events:
            lines.append(json.dumps({"time": e.time, "kind": e.kind, "particle": e.particle,
                                     "child": e.child, "site": list(e.site)}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ndjson(cls, text: str) -> "BrwGenealogy":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        g = cls({int(p): tuple(s) for p, s in rows[0]["particles"].items()})
        for r in rows[1:]:
            g.events.append(BrwEvent(r["time"], r["kind"], r["particle"], r["child"], tuple(r["site"])))
        return g


def simulate_brw(
    config0: LatticeConfig,
    lam: float,
    t: float,
    rng,
    record: bool = True,
) -> tuple[LatticeConfig, BrwGenealogy | None]:
    """Exact trajectory: aggregate rate (1+lam)*n, then birth w.p. lam/(1+lam)."""
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    if config0.is_empty:
        raise EmptyConfiguration("initial configuration is empty")
    cfg = config0.copy()
    gen = BrwGenealogy(config0.particles()) if record else None
    steps = _neighbours(cfg.d)
    n_steps = len(steps)
    p_birth = lam / (1 + lam)
    now = 0.0
    while cfg.ids:
        n = len(cfg.ids)
        now += rng.expovariate((1 + lam) * n)
        if now > t:
            break
        i = int(rng.random() * n)
        if rng.random() < p_birth:
            step = steps[int(rng.random() * n_steps)]
            site = tuple(a + b for a, b in zip(cfg.sites[i], step))
            child = cfg.next_id
            cfg.next_id += 1
            if gen is not None:
                gen.events.append(BrwEvent(now, "birth", cfg.ids[i], child, site))
            cfg._add(child, site)
        else:
            site = cfg.sites[i]
            pid = cfg._remove_at(i)
            if gen is not None:
                gen.events.append(BrwEvent(now, "death", pid, None, site))
    return cfg, gen


@dataclass
class WalkerPath:
    ancestor: int
    t: float
    start_site: Site
    # (time, from particle, to particle, direction)
    jumps: list[tuple[float, int, int, Site]] = field(default_factory=list)

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)

    @property
    def final_particle(self) -> int:
        return self.jumps[-1][2] if self.jumps else self.ancestor

    @property
    def final_site(self) -> Site:
        site = self.start_site
        for *_, step in self.jumps:
            site = tuple(a + b for a, b in zip(site, step))
        return site

    def particle_at(self, s: float) -> int:
        current = self.ancestor
        for time, _, to, _ in self.jumps:
            if time > s:
                break
            current = to
        return current


def walker_path(genealogy: BrwGenealogy, ancestor: int, t: float,
                flags: dict[int, bool] | None = None) -> WalkerPath:
    """Follow ``ancestor``'s line, switching to a newborn iff its line reaches ``t``."""
    if ancestor not in genealogy.initial:
        raise KeyError(ancestor)
    if flags is None:
        flags = genealogy.survival_flags(t)
    if not flags[ancestor]:
        raise NoSurvivingDescendant(ancestor)
    start = genealogy.initial[ancestor]
    path = WalkerPath(ancestor, t, start)
    walker, here = ancestor, start
    for e in genealogy.events:
        if e.time > t:
            break
        if e.kind == "birth" and e.particle == walker and flags[e.child]:
            step = tuple(a - b for a, b in zip(e.site, here))
            path.jumps.append((e.time, walker, e.child, step))
            walker, here = e.child, e.site
    return path


def surviving_ancestors(genealogy: BrwGenealogy, t: float) -> set[int]:
    flags = genealogy.survival_flags(t)
    return {p for p in genealogy.initial if flags[p]}
