"""Exact model counting: CDP, Relsat-style component DPLL, and component
caching DPLL, with pluggable branching heuristics and solver statistics."""

from __future__ import annotations

import json
import random
import sys
import time
from array import array
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

from .formula import CnfFormula, Trail


@dataclass(frozen=True)
class Component:
    clause_ids: tuple[int, ...]
    vars: tuple[int, ...]

    def __len__(self):
        return len(self.vars)


# (component, trail, step) -> literal
BranchingHeuristic = Callable[[Component, Trail, int], int]


def find_components(trail: Trail, scope: Optional[Component] = None) -> list[Component]:
    """Split the active clauses of ``scope`` (default: the whole residual
    formula) into variable-connected components, ordered by smallest clause id."""
    n_true = trail.n_true
    value = trail.value
    clauses = trail.clauses
    var_occ = trail.var_occ
    if scope is None:
        candidates = range(len(clauses))
    else:
        candidates = scope.clause_ids
    seen_clause = set()
    seen_var = set()
    out = []
    for start in candidates:
        if n_true[start] or start in seen_clause:
            continue
        seen_clause.add(start)
        stack = [start]
        cids = []
        cvars = []
        while stack:
            cid = stack.pop()
            cids.append(cid)
            for lit in clauses[cid]:
                v = lit if lit > 0 else -lit
                if value[v] or v in seen_var:
                    continue
                seen_var.add(v)
                cvars.append(v)
                for other in var_occ[v]:
                    if not n_true[other] and other not in seen_clause:
                        seen_clause.add(other)
                        stack.append(other)
        cids.sort()
        cvars.sort()
        out.append(Component(tuple(cids), tuple(cvars)))
    return out


def residual_component(trail: Trail) -> Component:
    """All active clauses as one (possibly disconnected) pseudo-component."""
    cids = trail.active_clause_ids()
    value = trail.value
    clauses = trail.clauses
    vs = {abs(l) for cid in cids for l in clauses[cid] if value[abs(l)] == 0}
    return Component(tuple(cids), tuple(sorted(vs)))


def component_key(component: Component) -> bytes:
    """Canonical byte key: clause count, clause ids, then variable ids."""
    buf = array("I", [len(component.clause_ids)])
    buf.extend(component.clause_ids)
    buf.extend(component.vars)
    if sys.byteorder != "little":
        buf.byteswap()
    return buf.tobytes()


class ComponentCache:
    """Map from component keys to exact counts. With a capacity, the least
    recently used entry is evicted when full."""

    def __init__(self, capacity: Optional[int] = None, enabled: bool = True):
        self.capacity = capacity
        self.enabled = enabled
        self._store: "OrderedDict[bytes, int]" = OrderedDict()
        self.hits = 0
        self.misses = 0
        self.stores = 0
        self.evictions = 0
        self.stored_size_sum = 0
        self.hit_size_sum = 0

    def __len__(self):
        return len(self._store)

    def lookup(self, key: bytes, size: int = 0) -> Optional[int]:
        value = self._store.get(key)
        if value is None:
            self.misses += 1
            return None
        self.hits += 1
        self.hit_size_sum += size
        if self.capacity is not None:
            self._store.move_to_end(key)
        return value

    def store(self, key: bytes, count: int, size: int = 0) -> None:
        if not self.enabled:
            return
        if self.capacity is not None:
            if self.capacity <= 0:
                return
            if key not in self._store and len(self._store) >= self.capacity:
                self._store.popitem(last=False)
                self.evictions += 1
        self._store[key] = count
        self.stores += 1
        self.stored_size_sum += size


# -- baseline heuristics ---------------------------------------------------

def literal_occurrences(component: Component, trail: Trail) -> dict[int, int]:
    """Occurrences of each unassigned literal in the component's active clauses."""
    counts: dict[int, int] = {}
    value = trail.value
    clauses = trail.clauses
    n_true = trail.n_true
    for cid in component.clause_ids:
        if n_true[cid]:
            continue
        for lit in clauses[cid]:
            if value[lit if lit > 0 else -lit] == 0:
                counts[lit] = counts.get(lit, 0) + 1
    return counts


def pick_occurrence_max(component: Component, trail: Trail, step: int = 0) -> int:
    counts = literal_occurrences(component, trail)
    best_var = 0
    best = -1
    for v in component.vars:
        total = counts.get(v, 0) + counts.get(-v, 0)
        if total > best:
            best, best_var = total, v
    if best_var == 0:
        raise ValueError("empty component")
    return best_var if counts.get(best_var, 0) >= counts.get(-best_var, 0) else -best_var


def pick_random(component: Component, rng: random.Random) -> int:
    v = component.vars[rng.randrange(len(component.vars))]
    return v if rng.random() < 0.5 else -v


class RandomLiteral:
    """Uniform literal choice from a seeded stream."""

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def __call__(self, component: Component, trail: Trail, step: int) -> int:
        return pick_random(component, self.rng)


# -- engines ---------------------------------------------------------------

@dataclass
class CountResult:
    count: Optional[int]
    decisions: int = 0
    conflicts: int = 0
    cache_lookups: int = 0
    cache_hits: int = 0
    components_found: int = 0
    stored_size_sum: int = 0
    hit_size_sum: int = 0
    per_var_first_decision: dict[int, int] = field(default_factory=dict)
    aborted: bool = False
    wall_seconds: float = 0.0

    @property
    def solved(self) -> bool:
        return not self.aborted

    def record(self) -> dict:
        return {
            "count": None if self.count is None else str(self.count),
            "decisions": self.decisions,
            "conflicts": self.conflicts,
            "cache_lookups": self.cache_lookups,
            "cache_hits": self.cache_hits,
            "components_found": self.components_found,
            "stored_size_sum": self.stored_size_sum,
            "hit_size_sum": self.hit_size_sum,
            "aborted": self.aborted,
            "wall_seconds": self.wall_seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.record())


class _Abort(Exception):
    pass


class _Search:
    def __init__(self, formula: CnfFormula, heuristic: Optional[BranchingHeuristic],
                 cache: Optional[ComponentCache], max_decisions: Optional[int]):
        self.trail = Trail(formula)
        self.heuristic = heuristic or pick_occurrence_max
        self.cache = cache
        self.max_decisions = max_decisions
        self.result = CountResult(count=None)

    def decide(self, component: Component) -> int:
        res = self.result
        if self.max_decisions is not None and res.decisions >= self.max_decisions:
            raise _Abort
        step = res.decisions
        lit = self.heuristic(component, self.trail, step)
        v = abs(lit)
        if v not in component.vars or self.trail.value[v] != 0:
            raise ValueError(f"heuristic returned literal {lit} outside the component")
        res.decisions = step + 1
        res.per_var_first_decision.setdefault(v, step)
        return lit

    def propagate(self, lit: int) -> bool:
        """Propagate ``lit``; True on conflict (frame still pushed)."""
        conflict = self.trail.unit_propagate(lit).conflict
        if conflict:
            self.result.conflicts += 1
        return conflict

    # CDP: no components, no cache
    def cdp(self) -> int:
        trail = self.trail
        if trail.num_active == 0:
            return 1 << trail.num_unset
        lit = self.decide(residual_component(trail))
        total = 0
        for side in (lit, -lit):
            if not self.propagate(side):
                total += self.cdp()
            trail.undo()
        return total

    # Relsat / #DPLLCache: one component at a time
    def component_count(self, comp: Component) -> int:
        cache = self.cache
        key = None
        if cache is not None:
            key = component_key(comp)
            self.result.cache_lookups += 1
            hit = cache.lookup(key, len(comp.vars))
            if hit is not None:
                self.result.cache_hits += 1
                self.result.hit_size_sum += len(comp.vars)
                return hit
        lit = self.decide(comp)
        total = self.count_side(comp, lit) + self.count_side(comp, -lit)
        if cache is not None and cache.enabled:
            cache.store(key, total, len(comp.vars))
            self.result.stored_size_sum += len(comp.vars)
        return total

    def count_side(self, comp: Component, lit: int) -> int:
        trail = self.trail
        try:
            if self.propagate(lit):
                return 0
            return self.split_and_count(comp)
        finally:
            trail.undo()

    def split_and_count(self, scope: Optional[Component]) -> int:
        trail = self.trail
        comps = find_components(trail, scope)
        self.result.components_found += len(comps)
        if scope is None:
            unset = trail.num_unset
        else:
            value = trail.value
            unset = sum(1 for v in scope.vars if value[v] == 0)
        free = unset - sum(len(c.vars) for c in comps)
        total = 1 << free
        for c in comps:
            sub = self.component_count(c)
            if sub == 0:
                return 0
            total *= sub
        return total

    def run(self, mode: str) -> CountResult:
        start = time.perf_counter()
        trail = self.trail
        limit = sys.getrecursionlimit()
        need = 4 * trail.num_vars + 1000
        if need > limit:
            sys.setrecursionlimit(need)
        try:
            if trail.propagate_units().conflict:
                self.result.conflicts += 1
                count = 0
            elif mode == "cdp":
                count = self.cdp()
            else:
                count = self.split_and_count(None)
            self.result.count = count
        except _Abort:
            self.result.aborted = True
        finally:
            if need > limit:
                sys.setrecursionlimit(limit)
        self.result.wall_seconds = time.perf_counter() - start
        return self.result


def count_cdp(formula: CnfFormula, heuristic: Optional[BranchingHeuristic] = None,
              max_decisions: Optional[int] = None) -> CountResult:
    return _Search(formula, heuristic, None, max_decisions).run("cdp")


def count_relsat(formula: CnfFormula, heuristic: Optional[BranchingHeuristic] = None,
                 max_decisions: Optional[int] = None) -> CountResult:
    return _Search(formula, heuristic, None, max_decisions).run("relsat")


def count_sharp(formula: CnfFormula, heuristic: Optional[BranchingHeuristic] = None,
                cache: Optional[ComponentCache] = None,
                max_decisions: Optional[int] = None) -> CountResult:
    """Component caching DPLL. A fresh unbounded cache is used when none is given."""
    if cache is None:
        cache = ComponentCache()
    return _Search(formula, heuristic, cache, max_decisions).run("sharp")


ENGINES = {"cdp": count_cdp, "relsat": count_relsat, "sharp": count_sharp}


def count(formula: CnfFormula, engine: str = "sharp", heuristic=None, max_decisions=None) -> CountResult:
    try:
        fn = ENGINES[engine]
    except KeyError:
        raise ValueError(f"unknown engine {engine!r}") from None
    return fn(formula, heuristic, max_decisions=max_decisions)
