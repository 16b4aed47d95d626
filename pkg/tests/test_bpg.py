import itertools
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from qsdlab.bpg import (
    EMPTY_ENCODING,
    EmptyTree,
    GenealogyRecord,
    NotALeaf,
    RootedTree,
    UnknownVertex,
    all_rooted_trees,
    apply_branching,
    apply_death,
    canonical_encoding,
    descendant_size_path,
    descendants_at,
    diameter,
    leaf_count_of_encoding,
    simulate_bpg,
    sole_survivor,
    surviving_initial_leaves,
)
from qsdlab.offspring import validate
from qsdlab.rng import make_rng

LAW = validate({0: 0.6, 2: 0.4})


def tree(parent):
    return RootedTree(parent)


# -- brute-force isomorphism oracle ----------------------------------------

def iso(ta, a, tb, b):
    """Rooted isomorphism by trying every child matching. Exponential, tiny trees only."""
    ca, cb = ta.children[a], tb.children[b]
    if len(ca) != len(cb):
        return False
    for perm in itertools.permutations(cb):
        if all(iso(ta, x, tb, y) for x, y in zip(ca, perm)):
            return True
    return False


def isomorphic(ta, tb):
    if ta.n_vertices != tb.n_vertices:
        return False
    return iso(ta, ta.root, tb, tb.root)


@pytest.mark.parametrize("n,expected", [(1, 1), (2, 1), (3, 2), (4, 4), (5, 9), (6, 20), (7, 48)])
def test_encoding_matches_brute_force_isomorphism(n, expected):
    reps: list[RootedTree] = []
    codes: list[str] = []
    for t in all_rooted_trees(n):
        code = canonical_encoding(t)
        matches = [i for i, r in enumerate(reps) if isomorphic(t, r)]
        assert len(matches) <= 1
        if matches:
            assert codes[matches[0]] == code
        else:
            assert code not in codes
            reps.append(t)
            codes.append(code)
    # rooted unlabeled trees on n vertices
    assert len(reps) == expected


# -- branching and death ---------------------------------------------------

def test_single_branch_two():
    t = apply_branching(RootedTree.single(), 0, 2)
    assert t.n_leaves == 2 and t.n_vertices == 3
    assert canonical_encoding(t) == "(()())"


def test_branch_one_keeps_unary_vertex():
    t = apply_branching(RootedTree.single(), 0, 1)
    assert t.n_leaves == 1 and t.n_vertices == 2
    assert canonical_encoding(t) == "(())"
    assert diameter(t) == 1


def test_death_of_only_leaf_empties():
    t = apply_death(RootedTree.single(), 0)
    assert t.is_empty
    assert canonical_encoding(t) == EMPTY_ENCODING


def test_branch_requires_leaf():
    t = RootedTree.star(2)
    with pytest.raises(NotALeaf):
        t.branch(0, 2)
    with pytest.raises(NotALeaf):
        t.kill(0)


def test_apply_is_pure():
    t = RootedTree.star(2)
    before = t.to_parent_map()
    apply_branching(t, 1, 3)
    apply_death(t, 1)
    assert t.to_parent_map() == before


def test_pruning_root_is_mrca_deletes_dead_lineage_only():
    # 0 -> {1, 2}, 1 -> {3, 4}; killing 3 keeps 1 as a unary vertex
    t = tree({0: None, 1: 0, 2: 0, 3: 1, 4: 1})
    pruned = t.kill(3)
    assert pruned == [3]
    assert t.to_parent_map() == {0: None, 1: 0, 2: 0, 4: 1}
    assert canonical_encoding(t) == "((())())"
    assert diameter(t) == 3


def test_pruning_dead_ancestors_removed():
    # 0 -> {1, 2, 5}, 1 -> {3}, 3 -> {4}; killing 4 removes 4, 3, 1
    t = tree({0: None, 1: 0, 2: 0, 5: 0, 3: 1, 4: 3})
    pruned = t.kill(4)
    assert pruned == [4, 3, 1]
    assert t.to_parent_map() == {0: None, 2: 0, 5: 0}


def test_pruning_reroots_at_mrca():
    # 0 -> {1, 2}, 1 -> {3, 4}; killing 2 makes 1 the MRCA
    t = tree({0: None, 1: 0, 2: 0, 3: 1, 4: 1})
    pruned = t.kill(2)
    assert pruned == [2, 0]
    assert t.root == 1
    assert t.to_parent_map() == {1: None, 3: 1, 4: 1}


def test_pruning_reroot_removes_unary_chain():
    # 0 -> {1, 2}, 1 -> {3}, 3 -> {4, 5}; killing 2 leaves MRCA 3
    t = tree({0: None, 1: 0, 2: 0, 3: 1, 4: 3, 5: 3})
    pruned = t.kill(2)
    assert pruned == [2, 0, 1]
    assert t.root == 3
    assert canonical_encoding(t) == "(()())"


def test_pruning_reroot_keeps_unary_vertices_below_mrca():
    # 0 -> {1, 2}, 1 -> {3, 4}, 3 -> {5}; killing 2 leaves 1 as root, 3 stays unary
    t = tree({0: None, 1: 0, 2: 0, 3: 1, 4: 1, 5: 3})
    t.kill(2)
    assert t.root == 1
    assert canonical_encoding(t) == "((())())"


def test_pruning_to_single_survivor():
    t = tree({0: None, 1: 0, 2: 0, 3: 1})
    t.kill(2)
    assert t.to_parent_map() == {3: None}


# -- diameter ---------------------------------------------------------------

def test_diameter_examples():
    assert diameter(RootedTree.single()) == 0
    assert diameter(RootedTree.path(6)) == 5
    assert diameter(RootedTree.star(2)) == 2
    assert diameter(RootedTree.star(7)) == 2
    with pytest.raises(EmptyTree):
        diameter(RootedTree.empty())


def brute_diameter(t):
    def dist(a, b):
        anc = {}
        v, d = a, 0
        while v is not None:
            anc[v] = d
            v, d = t.parent[v], d + 1
        v, d = b, 0
        while v not in anc:
            v, d = t.parent[v], d + 1
        return d + anc[v]

    verts = list(t.parent)
    return max(dist(a, b) for a in verts for b in verts)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_diameter_matches_all_pairs(n):
    for t in all_rooted_trees(n):
        assert diameter(t) == brute_diameter(t)


# -- encoding --------------------------------------------------------------

def test_encoding_round_trip_and_leaf_count():
    for n in range(1, 7):
        for t in all_rooted_trees(n):
            code = canonical_encoding(t)
            assert canonical_encoding(RootedTree.from_encoding(code)) == code
            assert leaf_count_of_encoding(code) == t.n_leaves
    assert leaf_count_of_encoding(EMPTY_ENCODING) == 0


def relabel(t, rng):
    ids = list(t.parent)
    new = rng.sample(range(1000, 1000 + 10 * len(ids)), len(ids))
    m = dict(zip(ids, new))
    return RootedTree({m[v]: (None if p is None else m[p]) for v, p in t.parent.items()})


# -- random operation sequences ---------------------------------------------

ops = st.lists(st.tuples(st.floats(0, 1, exclude_max=True), st.integers(0, 3)), max_size=60)


def run_ops(sequence):
    t = RootedTree.single()
    history = []
    for u, k in sequence:
        if t.is_empty:
            break
        leaf = t.leaves[int(u * t.n_leaves)]
        if k:
            t.branch(leaf, k)
        else:
            t.kill(leaf)
        history.append((k, t.copy()))
    return t, history


@settings(max_examples=200, deadline=None)
@given(ops)
def test_tree_invariants_under_dynamics(sequence):
    _, history = run_ops(sequence)
    for k, t in history:
        if t.is_empty:
            continue
        leaves = {v for v, c in t.children.items() if not c}
        assert leaves == set(t.leaves)
        assert [v for v, p in t.parent.items() if p is None] == [t.root]
        if k == 0:
            # after a death the root is the MRCA of the living
            assert t.mrca() == t.root
            if t.n_leaves >= 2:
                assert len(t.children[t.root]) >= 2
            else:
                assert canonical_encoding(t) == "()"


@settings(max_examples=100, deadline=None)
@given(ops, st.integers(0, 2**31))
def test_encoding_invariant_under_relabelling(sequence, seed):
    t, _ = run_ops(sequence)
    if t.is_empty:
        return
    assert canonical_encoding(relabel(t, random.Random(seed))) == canonical_encoding(t)


@settings(max_examples=100, deadline=None)
@given(ops)
def test_leaf_count_tracks_offspring(sequence):
    t = RootedTree.single()
    n = 1
    for u, k in sequence:
        if t.is_empty:
            break
        t2 = apply_branching(t, t.leaves[0], k) if k else apply_death(t, t.leaves[0])
        n += k - 1
        assert t2.n_leaves == n
        t = t2


# -- simulation ---------------------------------------------------------------

def test_pure_death_survival_probability():
    law = validate({0: 1.0}, check_hypotheses=False)
    n = 10**6
    rng = make_rng(7)
    t0 = RootedTree.single()
    alive = sum(1 for _ in range(n) if not simulate_bpg(t0, law, 1.0, rng, record=False)[0].is_empty)
    assert abs(alive / n - math.exp(-1)) <= 0.01


def test_expected_leaves():
    n = 100_000
    rng = make_rng(8)
    sizes = [simulate_bpg(RootedTree.single(), LAW, 5.0, rng, record=False)[0].n_leaves for _ in range(n)]
    mean = sum(sizes) / n
    var = sum((s - mean) ** 2 for s in sizes) / (n - 1)
    assert abs(mean - math.exp(-1)) <= 3 * math.sqrt(var / n)


def test_seed_reproducibility():
    a, ra = simulate_bpg(RootedTree.star(3), LAW, 6.0, make_rng(42, 0))
    b, rb = simulate_bpg(RootedTree.star(3), LAW, 6.0, make_rng(42, 0))
    assert canonical_encoding(a) == canonical_encoding(b)
    assert ra.events == rb.events


def test_record_replay_reproduces_final_tree():
    rng = make_rng(3)
    for _ in range(200):
        final, rec = simulate_bpg(RootedTree.star(2), LAW, 4.0, rng)
        t = RootedTree(rec.initial_parent)
        for ev in rec.events:
            if ev.offspring:
                assert tuple(t.branch(ev.actor, ev.offspring)) == ev.created
            else:
                assert tuple(t.kill(ev.actor)) == ev.pruned
        assert t.to_parent_map() == final.to_parent_map()
        assert set(final.leaves) == rec.alive_at(4.0)


def test_ndjson_round_trip():
    _, rec = simulate_bpg(RootedTree.star(2), LAW, 5.0, make_rng(9))
    back = GenealogyRecord.from_ndjson(rec.to_ndjson())
    assert back.initial_parent == rec.initial_parent
    assert back.events == rec.events


def test_descendants_partition_leaves():
    rng = make_rng(10)
    for _ in range(300):
        t0 = RootedTree.star(3)
        final, rec = simulate_bpg(t0, LAW, 3.0, rng)
        for s in (0.0, 1.0, 2.5, 3.0):
            total = sum(descendants_at(rec, y, s) for y in rec.initial_leaves)
            assert total == len(rec.alive_at(s))
        assert descendants_at(rec, 0, 3.0) == final.n_leaves
        survivors = surviving_initial_leaves(rec, 3.0)
        assert sole_survivor(rec, 3.0) == (len(survivors) == 1)


def test_descendants_unknown_vertex():
    _, rec = simulate_bpg(RootedTree.single(), LAW, 1.0, make_rng(1))
    with pytest.raises(UnknownVertex):
        descendants_at(rec, 10**9, 1.0)


def test_descendant_size_path_ends_at_count():
    rng = make_rng(12)
    for _ in range(300):
        _, rec = simulate_bpg(RootedTree.star(2), LAW, 5.0, rng)
        for y in rec.initial_leaves:
            path = descendant_size_path(rec, y, 5.0)
            assert path[0] == (0.0, 1)
            assert path[-1][1] == descendants_at(rec, y, 5.0)
