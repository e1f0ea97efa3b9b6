"""Preimage counting for elementary cellular automata.

Given a rule R, a width n and a number of steps r, sample a terminal state T
and count the initial states I with R^r(I) = T. Variables cover the whole
evolution grid, rows 0..r: variable ``row * n + col + 1``.
"""

from __future__ import annotations

import itertools
import random
from functools import lru_cache

import numpy as np

from ..formula import CnfFormula
from .common import Instance


def rule_table(rule: int) -> tuple[int, ...]:
    """Output bit for each neighbourhood index 4*left + 2*center + right."""
    if not 0 <= rule <= 255:
        raise ValueError(f"rule must be in 0..255, got {rule}")
    return tuple((rule >> i) & 1 for i in range(8))


def cell_step(state, rule: int) -> list[int]:
    n = len(state)
    if n < 3:
        raise ValueError("state needs at least 3 cells")
    table = rule_table(rule)
    return [table[4 * state[i - 1] + 2 * state[i] + state[(i + 1) % n]] for i in range(n)]


@lru_cache(maxsize=256)
def rule_clauses(rule: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """CNF template for ``out = R(left, center, right)``.

    Literals are (position, polarity) pairs with positions 0=left, 1=center,
    2=right, 3=out. Built from the 8 truth-table clauses by merging clauses
    that differ in one polarity (prime implicates), then a greedy cover of
    the forbidden points.
    """
    table = rule_table(rule)
    # each forbidden point of (l, c, r, out) gives one clause; a clause is a
    # 4-tuple over {1: positive literal, 0: negative literal, None: absent}
    base = set()
    for l, c, r in itertools.product((0, 1), repeat=3):
        out = table[4 * l + 2 * c + r]
        point = (l, c, r, 1 - out)
        # the clause excluding `point` has each literal false at it
        base.add(tuple(1 - b for b in point))
    primes = set()
    level = set(base)
    while level:
        merged = set()
        used = set()
        for a, b in itertools.combinations(sorted(level, key=repr), 2):
            diff = [i for i in range(4) if a[i] != b[i]]
            if len(diff) == 1 and a[diff[0]] is not None and b[diff[0]] is not None:
                m = list(a)
                m[diff[0]] = None
                merged.add(tuple(m))
                used.add(a)
                used.add(b)
        primes |= level - used
        level = merged

    def covers(clause, point):
        # clause is falsified at `point`
        return all(lit is None or lit != point[i] for i, lit in enumerate(clause))

    points = [tuple(1 - x for x in cl) for cl in base]
    remaining = set(points)
    chosen = []
    candidates = sorted(primes, key=lambda cl: (sum(x is None for x in cl), repr(cl)), reverse=True)
    while remaining:
        best = max(candidates, key=lambda cl: sum(covers(cl, p) for p in remaining))
        chosen.append(best)
        remaining = {p for p in remaining if not covers(best, p)}
    return tuple(
        tuple((i, lit) for i, lit in enumerate(cl) if lit is not None)
        for cl in chosen
    )


def encode_cell(rule: int, n: int, r: int, target) -> CnfFormula:
    if n < 3 or r < 1:
        raise ValueError("cell needs n >= 3 and r >= 1")
    if len(target) != n:
        raise ValueError("target length must equal n")

    def var(row, col):
        return row * n + (col % n) + 1

    template = rule_clauses(rule)
    clauses = []
    for row in range(1, r + 1):
        for col in range(n):
            ids = (var(row - 1, col - 1), var(row - 1, col), var(row - 1, col + 1), var(row, col))
            for tmpl in template:
                clauses.append(tuple(ids[pos] if pol else -ids[pos] for pos, pol in tmpl))
    for col, bit in enumerate(target):
        clauses.append((var(r, col) if bit else -var(r, col),))
    num_vars = n * (r + 1)
    time = {var(row, col): row / r for row in range(r + 1) for col in range(n)}
    coord = {var(row, col): (row, col) for row in range(r + 1) for col in range(n)}
    return CnfFormula.from_clauses(num_vars, clauses, time=time, coord=coord)


def cell_oracle_count(rule: int, n: int, r: int, target) -> int:
    """Forward-simulate all 2**n initial states."""
    if n > 24:
        raise ValueError("forward simulation limited to n <= 24")
    table = np.array(rule_table(rule), dtype=np.uint8)
    idx = np.arange(1 << n, dtype=np.int64)
    state = ((idx[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    for _ in range(r):
        left = np.roll(state, 1, axis=1)
        right = np.roll(state, -1, axis=1)
        state = table[4 * left + 2 * state + right]
    return int(np.all(state == np.asarray(target, dtype=np.uint8), axis=1).sum())


def gen_cell(rule: int, n: int, r: int, rng: random.Random, oracle: bool = False, seed=None) -> Instance:
    target = [rng.getrandbits(1) for _ in range(n)]
    formula = encode_cell(rule, n, r, target)
    inst = Instance(formula, "cell", {"rule": rule, "n": n, "r": r}, seed, meta={"target": target})
    if oracle:
        inst.oracle_count = cell_oracle_count(rule, n, r, target)
    return inst
