import json
import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from sharpbranch.counting import (
    ComponentCache, Component, RandomLiteral, component_key, count, count_cdp, count_relsat,
    count_sharp, find_components, pick_occurrence_max, pick_random,
)
from sharpbranch.formula import CnfFormula, Trail, rename_formula
from sharpbranch.generators.oracle import oracle_count

FIG2 = CnfFormula.from_clauses(5, [(1, -4), (-1, -2), (3, 5)])
ENGINES = (count_cdp, count_relsat, count_sharp)


def random_formula(rng, min_vars=1, max_vars=10, max_clauses=20):
    n = rng.randint(min_vars, max_vars)
    clauses = []
    for _ in range(rng.randint(0, max_clauses)):
        width = rng.randint(1, min(4, n))
        vs = rng.sample(range(1, n + 1), width)
        clauses.append([v if rng.random() < 0.5 else -v for v in vs])
    return CnfFormula.from_clauses(n, clauses)


class NoStoreCache(ComponentCache):
    def __init__(self):
        super().__init__(enabled=False)


@pytest.mark.parametrize("engine", ENGINES)
def test_small_counts(engine):
    assert engine(CnfFormula(3, ())).count == 8
    assert engine(CnfFormula(1, ((1,), (-1,)))).count == 0
    assert engine(FIG2).count == 12
    assert engine(CnfFormula(2, ((1, 2),))).count == 3
    assert engine(CnfFormula(4, ((1, 2), (3, 4)))).count == 9


def test_oracle_reference_values():
    assert oracle_count(FIG2) == 12
    assert oracle_count(CnfFormula(3, ())) == 8
    assert oracle_count(CnfFormula(1, ((1,), (-1,)))) == 0
    with pytest.raises(ValueError):
        oracle_count(CnfFormula(30, ()))


def test_relsat_sees_root_components():
    assert count_relsat(FIG2).components_found >= 2


def test_find_components_fig2():
    comps = find_components(Trail(FIG2))
    assert comps == [Component((0, 1), (1, 2, 4)), Component((2,), (3, 5))]


def test_find_components_shared_vars():
    f = CnfFormula(5, ((1, 2), (2, 3), (4, 5)))
    assert [c.clause_ids for c in find_components(Trail(f))] == [(0, 1), (2,)]
    assert len(find_components(Trail(CnfFormula(2, ((1, 2),))))) == 1


def test_find_components_respects_trail():
    t = Trail(FIG2)
    t.unit_propagate(1)
    assert find_components(t) == [Component((2,), (3, 5))]


def test_component_key():
    a = Component((0, 1), (1, 2, 4))
    assert component_key(a) == component_key(Component((0, 1), (1, 2, 4)))
    assert component_key(a) != component_key(Component((0, 2), (1, 2, 4)))
    # same shape over different variables never collides
    assert component_key(Component((0,), (1, 2))) != component_key(Component((1,), (3, 4)))


def test_component_key_stable_under_replay():
    t = Trail(FIG2)
    t.unit_propagate(3)
    first = [component_key(c) for c in find_components(t)]
    t.undo()
    t.unit_propagate(3)
    assert [component_key(c) for c in find_components(t)] == first


def test_occurrence_heuristic():
    def pick(f):
        t = Trail(f)
        return pick_occurrence_max(find_components(t)[0], t)

    assert pick(CnfFormula(3, ((1, 2), (1, 3)))) == 1
    assert pick(CnfFormula(2, ((1, 2),))) == 1
    assert pick(CnfFormula(4, ((-2, 3), (-2, 4), (3, 4)))) == -2


def test_random_heuristic_uniform_on_one_var():
    comp = Component((0,), (7,))
    rng = random.Random(3)
    draws = Counter(pick_random(comp, rng) for _ in range(10_000))
    assert set(draws) == {7, -7}
    # 3 sigma for Binomial(10^4, 1/2) is 150
    assert abs(draws[7] - 5000) < 150


def test_random_heuristic_deterministic():
    comp = Component((0, 1), (1, 2, 3, 4))
    a, b = RandomLiteral(11), RandomLiteral(11)
    t = Trail(CnfFormula(4, ((1, 2), (3, 4))))
    assert [a(comp, t, i) for i in range(50)] == [b(comp, t, i) for i in range(50)]


def test_shared_cache_second_solve():
    f = CnfFormula(3, ((1, 2), (-1, 3), (2, -3)))
    cache = ComponentCache()
    first = count_sharp(f, cache=cache)
    second = count_sharp(f, cache=cache)
    assert second.count == first.count
    assert second.decisions == 0
    g = CnfFormula(6, ((1, 2), (-1, 3), (4, 5), (-4, 6)))
    cache = ComponentCache()
    first = count_sharp(g, cache=cache)
    assert count_sharp(g, cache=cache).decisions <= first.decisions


def test_isomorphic_components_do_not_cross_hit():
    res = count_sharp(CnfFormula(4, ((1, 2), (3, 4))))
    assert res.count == 9
    assert res.cache_hits == 0


def test_lru_capacity():
    cache = ComponentCache(capacity=2)
    cache.store(b"a", 1)
    cache.store(b"b", 2)
    assert cache.lookup(b"a") == 1
    cache.store(b"c", 3)
    assert cache.lookup(b"b") is None
    assert cache.lookup(b"a") == 1 and cache.lookup(b"c") == 3
    assert cache.evictions == 1


def test_bounded_cache_still_exact():
    rng = random.Random(5)
    for _ in range(40):
        f = random_formula(rng, 4, 12, 25)
        assert count_sharp(f, cache=ComponentCache(capacity=3)).count == oracle_count(f)


def test_decision_cap_aborts():
    f = CnfFormula(10, tuple((i, i + 1) for i in range(1, 10)))
    res = count_cdp(f, max_decisions=2)
    assert res.aborted and res.count is None and res.decisions == 2
    assert not res.solved
    rec = json.loads(res.to_json())
    assert rec["count"] is None and rec["aborted"] is True


def test_record_fields():
    rec = count_sharp(FIG2).record()
    assert rec["count"] == "12"
    assert set(rec) == {"count", "decisions", "conflicts", "cache_lookups", "cache_hits",
                        "components_found", "stored_size_sum", "hit_size_sum", "aborted",
                        "wall_seconds"}


def test_heuristic_outside_component_rejected():
    with pytest.raises(ValueError):
        count_sharp(FIG2, heuristic=lambda comp, trail, step: 99)


def test_count_dispatch():
    assert count(FIG2, "relsat").count == 12
    with pytest.raises(ValueError):
        count(FIG2, "bogus")


def test_big_counts_are_exact():
    assert count_sharp(CnfFormula(200, ((1, 2),))).count == 3 * 2 ** 198


@pytest.mark.parametrize("engine", ENGINES)
def test_conflict_counter_matches_propagations(engine, monkeypatch):
    seen = []

    def spy(method):
        def wrapped(self, *args):
            res = method(self, *args)
            seen.append(res.conflict)
            return res
        return wrapped

    monkeypatch.setattr(Trail, "unit_propagate", spy(Trail.unit_propagate))
    monkeypatch.setattr(Trail, "propagate_units", spy(Trail.propagate_units))
    rng = random.Random(9)
    for _ in range(30):
        seen.clear()
        res = engine(random_formula(rng, 3, 9, 20))
        assert res.conflicts == sum(seen)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 100_000))
def test_engines_agree_with_oracle(seed):
    rng = random.Random(seed)
    f = random_formula(rng)
    expect = oracle_count(f)
    for engine in ENGINES:
        assert engine(f, pick_occurrence_max).count == expect
        assert engine(f, RandomLiteral(seed)).count == expect
    assert count_sharp(f, cache=NoStoreCache()).count == expect


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_caching_never_adds_decisions(seed):
    f = random_formula(random.Random(seed), 4, 12, 24)
    assert count_sharp(f).decisions <= count_relsat(f).decisions


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_product_rule(seed):
    rng = random.Random(seed)
    a = random_formula(rng, 1, 6, 8)
    b = random_formula(rng, 1, 6, 8)
    shift = a.num_vars
    joined = CnfFormula(a.num_vars + b.num_vars, a.clauses + tuple(
        tuple(l + shift if l > 0 else l - shift for l in c) for c in b.clauses))
    assert count_sharp(joined).count == count_sharp(a).count * count_sharp(b).count


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_renaming_invariance(seed):
    rng = random.Random(seed)
    f = random_formula(rng)
    perm = list(range(1, f.num_vars + 1))
    rng.shuffle(perm)
    assert count_sharp(rename_formula(f, [0] + perm)).count == count_sharp(f).count
