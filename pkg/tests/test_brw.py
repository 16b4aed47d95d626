import math

import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from qsdlab.brw import (
    BrwEvent,
    BrwGenealogy,
    CanonicalConfig,
    EmptyConfiguration,
    LatticeConfig,
    NoSurvivingDescendant,
    canonical_key,
    canonicalize,
    diameter,
    linf,
    simulate_brw,
    surviving_ancestors,
    walker_path,
)
from qsdlab.montecarlo import walker_jump_estimate
from qsdlab.rng import make_rng


# -- canonical form ------------------------------------------------------------

def test_canonicalize_translation_pair():
    a = canonicalize({(0,): 1, (3,): 2})
    b = canonicalize({(5,): 1, (8,): 2})
    assert a == b
    assert a.sites == (((0,), 1), ((3,), 2))


def test_canonicalize_distinguishes_mirror_images():
    # reflections are not translations
    assert canonicalize({(0,): 1, (1,): 2}) != canonicalize({(0,): 2, (1,): 1})


def test_canonicalize_empty_raises():
    with pytest.raises(EmptyConfiguration):
        canonicalize({})
    with pytest.raises(EmptyConfiguration):
        canonicalize(LatticeConfig(1))


occupancies = st.dictionaries(
    st.tuples(st.integers(-6, 6), st.integers(-6, 6)), st.integers(1, 3), min_size=1, max_size=8)


@settings(max_examples=200)
@given(occupancies, st.tuples(st.integers(-50, 50), st.integers(-50, 50)))
def test_canonical_form_translation_invariant(occ, v):
    cfg = LatticeConfig.from_occupancy(occ, 2)
    assert canonicalize(cfg.shifted(v)) == canonicalize(cfg)
    assert canonical_key(cfg.shifted(v)) == canonical_key(cfg)
    c = canonicalize(cfg)
    assert min(s for s, _ in c.sites) == (0, 0)
    assert c.n_particles == cfg.n_particles
    assert diameter(cfg.shifted(v)) == diameter(cfg)


@settings(max_examples=100)
@given(occupancies)
def test_canonical_json_round_trip(occ):
    c = canonicalize(occ)
    assert CanonicalConfig.from_json(c.to_json()) == c
    assert canonicalize(c.to_config()) == c
    cfg = LatticeConfig.from_occupancy(occ, 2)
    assert LatticeConfig.from_json(cfg.to_json()).occupancy() == cfg.occupancy()


@settings(max_examples=100)
@given(occupancies, occupancies)
def test_canonical_equality_means_translate(a, b):
    if canonicalize(a) == canonicalize(b):
        sa, sb = min(a), min(b)
        v = tuple(x - y for x, y in zip(sb, sa))
        assert {tuple(x + y for x, y in zip(s, v)): n for s, n in a.items()} == b


def test_json_format():
    cfg = LatticeConfig.single(1)
    assert cfg.to_json() == '{"d": 1, "sites": {"[0]": 1}}'


# -- diameter ---------------------------------------------------------------------

def test_diameter_examples():
    assert diameter({(0,): 4}) == 0
    assert diameter({(0,): 1, (5,): 1}) == 5
    assert diameter({(0, 0): 1, (2, -3): 1}) == 3
    with pytest.raises(EmptyConfiguration):
        diameter({})


@given(occupancies)
def test_diameter_is_max_pairwise_linf(occ):
    sites = list(occ)
    assert diameter(occ) == max(linf(a, b) for a in sites for b in sites)


# -- dynamics ---------------------------------------------------------------------

def test_expected_particles():
    n = 10**6
    rng = make_rng(21)
    cfg0 = LatticeConfig.single(1)
    sizes = [simulate_brw(cfg0, 0.5, 4.0, rng, record=False)[0].n_particles for _ in range(n)]
    mean = sum(sizes) / n
    var = sum((s - mean) ** 2 for s in sizes) / (n - 1)
    assert abs(mean - math.exp(-2.0)) <= 3 * math.sqrt(var / n)


def test_simulate_rejects_bad_input():
    with pytest.raises(ValueError):
        simulate_brw(LatticeConfig.single(1), 1.0, 1.0, make_rng(0))
    with pytest.raises(EmptyConfiguration):
        simulate_brw(LatticeConfig(1), 0.5, 1.0, make_rng(0))


def test_children_placed_on_neighbours():
    rng = make_rng(4)
    for _ in range(200):
        _, gen = simulate_brw(LatticeConfig.single(2), 0.8, 3.0, rng)
        where = dict(gen.initial)
        for e in gen.events:
            if e.kind == "birth":
                assert linf(where[e.particle], e.site) == 1
                assert sum(abs(a - b) for a, b in zip(where[e.particle], e.site)) == 1
                where[e.child] = e.site


def test_genealogy_ndjson_round_trip():
    _, gen = simulate_brw(LatticeConfig.single(2), 0.5, 4.0, make_rng(5))
    back = BrwGenealogy.from_ndjson(gen.to_ndjson())
    assert back.initial == gen.initial and back.events == gen.events


def test_seed_reproducibility():
    a, ga = simulate_brw(LatticeConfig.single(1), 0.5, 5.0, make_rng(99, 2))
    b, gb = simulate_brw(LatticeConfig.single(1), 0.5, 5.0, make_rng(99, 2))
    assert a.occupancy() == b.occupancy() and ga.events == gb.events


# -- walker path on hand-built genealogies ---------------------------------------

def birth(time, parent, child, site):
    return BrwEvent(time, "birth", parent, child, (site,))


def death(time, particle, site):
    return BrwEvent(time, "death", particle, None, (site,))


def test_walker_zero_jumps_when_newborns_die():
    gen = BrwGenealogy({0: (0,)}, [birth(1.0, 0, 1, 1), death(2.0, 1, 1)])
    path = walker_path(gen, 0, 3.0)
    assert path.n_jumps == 0
    assert path.final_particle == 0 and path.final_site == (0,)


def test_walker_one_jump_when_parent_dies():
    gen = BrwGenealogy({0: (0,)}, [birth(1.0, 0, 1, -1), death(2.0, 0, 0)])
    path = walker_path(gen, 0, 3.0)
    assert path.jumps == [(1.0, 0, 1, (-1,))]
    assert path.final_site == (-1,)
    assert path.particle_at(0.5) == 0 and path.particle_at(1.5) == 1


def test_walker_jumps_to_surviving_newborn_even_if_parent_survives():
    gen = BrwGenealogy({0: (0,)}, [birth(1.0, 0, 1, 1)])
    assert walker_path(gen, 0, 2.0).n_jumps == 1


def test_walker_three_jumps():
    events = [
        birth(0.5, 0, 1, 1),    # 1 survives
        birth(0.7, 0, 2, -1),   # from 0, irrelevant once walker moved
        birth(1.0, 1, 3, 2),    # 3 dies, no jump
        death(1.2, 3, 2),
        birth(1.5, 1, 4, 0),    # 4 survives
        birth(2.0, 4, 5, 1),    # 5 survives
        death(2.5, 0, 0),
        death(2.6, 2, -1),
        death(2.8, 1, 1),
    ]
    gen = BrwGenealogy({0: (0,)}, events)
    path = walker_path(gen, 0, 3.0)
    assert [j[2] for j in path.jumps] == [1, 4, 5]
    assert [j[3] for j in path.jumps] == [(1,), (-1,), (1,)]
    assert path.final_site == (1,)
    assert gen.alive_at(3.0) == {4, 5}


def test_walker_respects_horizon():
    gen = BrwGenealogy({0: (0,)}, [birth(1.0, 0, 1, 1), death(2.0, 0, 0), death(3.0, 1, 1)])
    assert walker_path(gen, 0, 2.5).n_jumps == 1
    with pytest.raises(NoSurvivingDescendant):
        walker_path(gen, 0, 3.5)


def test_surviving_ancestors():
    gen = BrwGenealogy({0: (0,), 1: (4,)}, [birth(1.0, 1, 2, 5), death(2.0, 0, 0), death(2.5, 1, 4)])
    assert surviving_ancestors(gen, 3.0) == {1}
    assert surviving_ancestors(gen, 1.5) == {0, 1}


def test_walker_stays_on_living_line():
    rng = make_rng(17)
    checked = 0
    while checked < 200:
        cfg, gen = simulate_brw(LatticeConfig.from_occupancy({(0,): 1, (3,): 1}), 0.7, 4.0, rng)
        if cfg.is_empty:
            continue
        checked += 1
        flags = gen.survival_flags(4.0)
        for x in surviving_ancestors(gen, 4.0):
            path = walker_path(gen, x, 4.0, flags)
            assert path.final_particle in cfg.ids
            assert cfg.site_of(path.final_particle) == path.final_site
            for time, _, to, step in path.jumps:
                assert flags[to]
                assert sum(map(abs, step)) == 1


# -- walker statistics --------------------------------------------------------------

def test_walker_directions_uniform_and_independent_d2():
    est = walker_jump_estimate(0.5, 2.0, 200_000, seed=3, d=2)
    assert est.survivors > 40_000
    steps = sorted(est.direction_counts)
    assert len(steps) == 4
    counts = [est.direction_counts[s] for s in steps]
    assert stats.chisquare(counts).pvalue > 1e-3
    pairs = [est.pair_counts[(a, b)] for a in steps for b in steps]
    assert stats.chisquare(pairs).pvalue > 1e-3
    assert est.separation_violations == 0


def test_walker_separation_with_many_ancestors():
    cfg0 = LatticeConfig.from_occupancy({(0,): 1, (2,): 1, (5,): 1})
    est = walker_jump_estimate(0.6, 3.0, 20_000, seed=8, initial=cfg0)
    assert est.survivors > 0
    assert est.separation_violations == 0


def test_jump_counts_accumulate():
    est = walker_jump_estimate(0.5, 3.0, 20_000, seed=1)
    assert sum(est.jump_counts.values()) == est.survivors
    assert est.prob_at_least(0) == 1.0
    assert sum(est.direction_counts.values()) == sum(j * c for j, c in est.jump_counts.items())


def test_walker_estimate_worker_invariant():
    a = walker_jump_estimate(0.5, 3.0, 30_000, seed=6, chunk_size=10_000, workers=1)
    b = walker_jump_estimate(0.5, 3.0, 30_000, seed=6, chunk_size=10_000, workers=3)
    assert a.jump_counts == b.jump_counts and a.survivors == b.survivors

