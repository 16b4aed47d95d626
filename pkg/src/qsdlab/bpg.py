"""Branching process with genealogy.

The state is a finite rooted tree whose leaves are the living individuals.
Vertex ids are increasing integers that are never reused, so an event log
(:class:`GenealogyRecord`) can be replayed offline to recover descendant
counts of any vertex that ever existed.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .offspring import OffspringDistribution

EMPTY_ENCODING = "∅"


class NotALeaf(ValueError):
    pass


class EmptyTree(ValueError):
    pass


class UnknownVertex(KeyError):
    pass


class RootedTree:
    """Mutable rooted tree; ``root is None`` is the absorbing empty tree.

    ``branch`` and ``kill`` mutate in place (the simulation path); the module
    functions :func:`apply_branching` and :func:`apply_death` work on copies.
    """

    __slots__ = ("parent", "children", "root", "leaves", "_leaf_pos", "next_id")

    def __init__(self, parent: dict[int, int | None] | None = None):
        self.parent: dict[int, int | None] = {}
        self.children: dict[int, list[int]] = {}
        self.root: int | None = None
        self.leaves: list[int] = []
        self._leaf_pos: dict[int, int] = {}
        self.next_id = 0
        if parent:
            self._load(parent)

    def _load(self, parent: dict[int, int | None]) -> None:
        roots = [v for v, p in parent.items() if p is None]
        if len(roots) != 1:
            raise ValueError("a tree needs exactly one root")
        self.root = roots[0]
        self.parent = dict(parent)
        self.children = {v: [] for v in parent}
        for v in sorted(parent):
            p = parent[v]
            if p is not None:
                if p not in self.children:
                    raise ValueError(f"parent {p} of {v} is not a vertex")
                self.children[p].append(v)
        # every vertex must reach the root
        for v in parent:
            seen = set()
            while v is not None:
                if v in seen:
                    raise ValueError("parent map contains a cycle")
                seen.add(v)
                v = parent[v]
        for v in sorted(parent):
            if not self.children[v]:
                self._add_leaf(v)
        self.next_id = max(parent) + 1

    @classmethod
    def single(cls) -> "RootedTree":
        return cls({0: None})

    @classmethod
    def empty(cls) -> "RootedTree":
        return cls()

    @classmethod
    def path(cls, n_vertices: int) -> "RootedTree":
        return cls({i: (i - 1 if i else None) for i in range(n_vertices)})

    @classmethod
    def star(cls, n_leaves: int) -> "RootedTree":
        return cls({0: None, **{i: 0 for i in range(1, n_leaves + 1)}})

    @classmethod
    def from_encoding(cls, code: str) -> "RootedTree":
        """Inverse of :func:`canonical_encoding` (up to vertex labels)."""
        if code == EMPTY_ENCODING:
            return cls()
        parent: dict[int, int | None] = {}
        stack: list[int] = []
        for ch in code:
            if ch == "(":
                v = len(parent)
                parent[v] = stack[-1] if stack else None
                stack.append(v)
            elif ch == ")":
                stack.pop()
            else:
                raise ValueError(f"bad character {ch!r} in encoding")
        if stack:
            raise ValueError("unbalanced encoding")
        return cls(parent)

    # -- queries -------------------------------------------------------
    @property
    def is_empty(self) -> bool:
        return self.root is None

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    def is_leaf(self, v: int) -> bool:
        return v in self._leaf_pos

    def depth(self, v: int) -> int:
        d = 0
        while self.parent[v] is not None:
            v = self.parent[v]
            d += 1
        return d

    def mrca(self) -> int | None:
        """Most recent common ancestor of all leaves."""
        if self.root is None:
            return None
        # every subtree holds a leaf, so the first fork (or leaf) is the MRCA
        v = self.root
        while len(self.children[v]) == 1:
            v = self.children[v][0]
        return v

    def copy(self) -> "RootedTree":
        t = RootedTree.__new__(RootedTree)
        t.parent = self.parent.copy()
        t.children = {v: c[:] for v, c in self.children.items()}
        t.root = self.root
        t.leaves = self.leaves[:]
        t._leaf_pos = self._leaf_pos.copy()
        t.next_id = self.next_id
        return t

    def to_parent_map(self) -> dict[int, int | None]:
        return dict(self.parent)

    def adjacency_dump(self) -> str:
        """Parenthesized ``vertex(children...)`` dump, for debugging."""
        if self.root is None:
            return EMPTY_ENCODING

        def dump(v):
            kids = self.children[v]
            if not kids:
                return str(v)
            return f"{v}(" + " ".join(dump(c) for c in kids) + ")"

        return dump(self.root)

    def __repr__(self) -> str:
        return f"RootedTree({self.adjacency_dump()})"

    # -- leaf bookkeeping ----------------------------------------------
    def _add_leaf(self, v: int) -> None:
        self._leaf_pos[v] = len(self.leaves)
        self.leaves.append(v)

    def _drop_leaf(self, v: int) -> None:
        i = self._leaf_pos.pop(v)
        last = self.leaves.pop()
        if last != v:
            self.leaves[i] = last
            self._leaf_pos[last] = i

    # -- dynamics ------------------------------------------------------
    def branch(self, leaf: int, k: int) -> list[int]:
        """Attach ``k >= 1`` children to ``leaf``; returns the new ids."""
        if leaf not in self._leaf_pos:
            raise NotALeaf(leaf)
        if k < 1:
            raise ValueError("k = 0 is a death, use kill()")
        self._drop_leaf(leaf)
        new = list(range(self.next_id, self.next_id + k))
        self.next_id += k
        kids = self.children[leaf]
        for v in new:
            self.parent[v] = leaf
            self.children[v] = []
            kids.append(v)
            self._add_leaf(v)
        return new

    def kill(self, leaf: int) -> list[int]:
        """Childless death of ``leaf`` followed by pruning.

        Returns the removed vertex ids (``leaf`` first). Removing the dead
        lineage of ``leaf`` and then the chain above the MRCA of the survivors
        is the same as deleting the non-descendants of the MRCA when the MRCA
        is not the root, and the dead ancestors of ``leaf`` when it is.
        """
        if leaf not in self._leaf_pos:
            raise NotALeaf(leaf)
        self._drop_leaf(leaf)
        pruned = []
        if not self.leaves:
            pruned = list(self.parent)
            pruned.remove(leaf)
            pruned.insert(0, leaf)
            self.parent.clear()
            self.children.clear()
            self.root = None
            return pruned
        parent, children = self.parent, self.children
        v = leaf
        while True:
            p = parent.pop(v)
            del children[v]
            pruned.append(v)
            siblings = children[p]
            siblings.remove(v)
            if siblings:
                break
            v = p
        r = self.root
        while len(children[r]) == 1:
            nxt = children[r][0]
            del parent[r], children[r]
            pruned.append(r)
            r = nxt
        if r != self.root:
            parent[r] = None
            self.root = r
        return pruned


def apply_branching(tree: RootedTree, leaf: int, k: int) -> RootedTree:
    new = tree.copy()
    new.branch(leaf, k)
    return new


def apply_death(tree: RootedTree, leaf: int) -> RootedTree:
    new = tree.copy()
    new.kill(leaf)
    return new


def canonical_encoding(tree: RootedTree) -> str:
    """AHU string: a leaf is ``()``, an inner vertex wraps its sorted child codes."""
    if tree.root is None:
        return EMPTY_ENCODING
    children = tree.children
    order = []
    stack = [tree.root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(children[v])
    code: dict[int, str] = {}
    for v in reversed(order):
        kids = children[v]
        if not kids:
            code[v] = "()"
        elif len(kids) == 1:
            code[v] = "(" + code.pop(kids[0]) + ")"
        else:
            code[v] = "(" + "".join(sorted(code.pop(c) for c in kids)) + ")"
    return code[tree.root]


def leaf_count_of_encoding(code: str) -> int:
    if code == EMPTY_ENCODING:
        return 0
    return code.count("()")


def diameter(tree: RootedTree) -> int:
    """Length of the longest path, by double BFS on the undirected tree."""
    if tree.root is None:
        raise EmptyTree("the empty tree has no diameter")

    def farthest(src):
        dist = {src: 0}
        queue = deque([src])
        last = src
        while queue:
            v = queue.popleft()
            last = v
            nbrs = list(tree.children[v])
            if tree.parent[v] is not None:
                nbrs.append(tree.parent[v])
            for w in nbrs:
                if w not in dist:
                    dist[w] = dist[v] + 1
                    queue.append(w)
        return last, dist[last]

    far, _ = farthest(tree.root)
    return farthest(far)[1]


class BpgEvent(NamedTuple):
    time: float
    actor: int
    offspring: int
    created: tuple[int, ...]
    pruned: tuple[int, ...]


@dataclass
class GenealogyRecord:
    initial_parent: dict[int, int | None]
    events: list[BpgEvent] = field(default_factory=list)

    @property
    def initial_leaves(self) -> list[int]:
        inner = {p for p in self.initial_parent.values() if p is not None}
        return sorted(v for v in self.initial_parent if v not in inner)

    def parent_map(self) -> dict[int, int | None]:
        """Genealogical parent of every vertex that ever existed."""
        par = dict(self.initial_parent)
        for ev in self.events:
            for c in ev.created:
                par[c] = ev.actor
        return par

    def alive_at(self, t: float) -> set[int]:
        alive = set(self.initial_leaves)
        for ev in self.events:
            if ev.time > t:
                break
            alive.discard(ev.actor)
            alive.update(ev.created)
        return alive

    def to_ndjson(self) -> str:
        lines = [json.dumps({"type": "init", "parent": {str(k): v for k, v in self.initial_parent.items()}})]
        for ev in self.events:
            lines.append(json.dumps({
                "time": ev.time, "actor": ev.actor, "offspring": ev.offspring,
                "created": list(ev.created), "pruned": list(ev.pruned),
            }))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ndjson(cls, text: str) -> "GenealogyRecord":
        lines = [json.loads(line) for line in text.splitlines() if line.strip()]
        head, rest = lines[0], lines[1:]
        rec = cls({int(k): v for k, v in head["parent"].items()})
        for e in rest:
            rec.events.append(BpgEvent(e["time"], e["actor"], e["offspring"],
                                       tuple(e["created"]), tuple(e["pruned"])))
        return rec


def simulate_bpg(
    tree0: RootedTree,
    offspring: OffspringDistribution,
    t: float,
    rng,
    record: bool = True,
) -> tuple[RootedTree, GenealogyRecord | None]:
    """Exact event-driven trajectory up to time ``t``.

    One exponential at the aggregate rate (#leaves * event_rate) picks the
    next event time, then the actor is a uniform leaf.
    """
    tree = tree0.copy()
    rec = GenealogyRecord(tree0.to_parent_map()) if record else None
    rate = offspring.event_rate
    now = 0.0
    leaves = tree.leaves
    while leaves:
        now += rng.expovariate(rate * len(leaves))
        if now > t:
            break
        leaf = leaves[int(rng.random() * len(leaves))]
        k = offspring.sample(rng)
        if k:
            created = tree.branch(leaf, k)
            pruned = ()
        else:
            created = ()
            pruned = tree.kill(leaf)
        if rec is not None:
            rec.events.append(BpgEvent(now, leaf, k, tuple(created), tuple(pruned)))
    return tree, rec


def descendants_at(record: GenealogyRecord, vertex: int, t: float) -> int:
    """Number of individuals alive at ``t`` that descend from ``vertex``."""
    par = dict(record.initial_parent)
    for ev in record.events:
        if ev.time > t:
            break
        for c in ev.created:
            par[c] = ev.actor
    if vertex not in par:
        raise UnknownVertex(vertex)
    count = 0
    for v in record.alive_at(t):
        while v is not None:
            if v == vertex:
                count += 1
                break
            v = par[v]
    return count


def surviving_initial_leaves(record: GenealogyRecord, t: float) -> list[int]:
    return [y for y in record.initial_leaves if descendants_at(record, y, t) >= 1]


def sole_survivor(record: GenealogyRecord, t: float) -> bool:
    """The event that exactly one initial leaf has living descendants at ``t``."""
    return len(surviving_initial_leaves(record, t)) == 1


def all_rooted_trees(n_vertices: int) -> Iterable[RootedTree]:
    """Every recursive labelling (parent[i] < i) on ``n_vertices`` vertices.

    Each rooted tree shape appears at least once; useful for exhaustive tests.
    """
    def rec(parents):
        if len(parents) == n_vertices:
            yield RootedTree({i: p for i, p in enumerate(parents)})
            return
        for p in range(len(parents)):
            yield from rec(parents + [p])

    if n_vertices == 0:
        return
    yield from rec([None])


def descendant_size_path(record: GenealogyRecord, vertex: int, t: float) -> list[tuple[float, int]]:
    """Piecewise-constant path of the number of living descendants of ``vertex``.

    Starts with ``(0.0, D_0)`` and appends ``(time, D)`` after every event up
    to ``t`` that changes the count.
    """
    par = record.initial_parent
    if vertex not in par:
        raise UnknownVertex(vertex)
    family = set()
    for leaf in record.initial_leaves:
        v = leaf
        while v is not None:
            if v == vertex:
                family.add(leaf)
                break
            v = par[v]
    size = len(family)
    path = [(0.0, size)]
    for ev in record.events:
        if ev.time > t:
            break
        if ev.actor in family:
            family.update(ev.created)
            size += ev.offspring - 1
            if ev.offspring != 1:
                path.append((ev.time, size))
    return path
