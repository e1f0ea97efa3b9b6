"""Partially revealed Sudoku grids; the count is the number of completions.

Variable ``(row * n + col) * n + digit + 1`` means cell (row, col) holds
``digit + 1``. Grids use 0 for empty cells and 1..n for digits.
"""

from __future__ import annotations

import math
import random

from ..formula import CnfFormula
from .common import Instance, exactly_one, pairwise_at_most_one


def box_size(n: int) -> int:
    b = math.isqrt(n)
    if b * b != n or n < 1:
        raise ValueError(f"sudoku size must be a perfect square, got {n}")
    return b


def _units(n: int):
    b = box_size(n)
    for r in range(n):
        yield [(r, c) for c in range(n)]
    for c in range(n):
        yield [(r, c) for r in range(n)]
    for br in range(0, n, b):
        for bc in range(0, n, b):
            yield [(br + i, bc + j) for i in range(b) for j in range(b)]


def encode_sudoku(grid, n: int) -> CnfFormula:
    def var(r, c, d):
        return (r * n + c) * n + d + 1

    clauses: list[tuple[int, ...]] = []
    for r in range(n):
        for c in range(n):
            clauses += exactly_one(var(r, c, d) for d in range(n))
    for unit in _units(n):
        for d in range(n):
            clauses += pairwise_at_most_one(var(r, c, d) for r, c in unit)
    for r in range(n):
        for c in range(n):
            if grid[r][c]:
                clauses.append((var(r, c, grid[r][c] - 1),))
    return CnfFormula.from_clauses(n ** 3, clauses)


def _candidates(grid, n, b, r, c):
    used = set(grid[r]) | {grid[i][c] for i in range(n)}
    br, bc = r - r % b, c - c % b
    used |= {grid[br + i][bc + j] for i in range(b) for j in range(b)}
    return [d for d in range(1, n + 1) if d not in used]


def sudoku_oracle_count(grid, n: int) -> int:
    """Count completions by backtracking on the most constrained empty cell."""
    b = box_size(n)
    grid = [list(row) for row in grid]
    for unit in _units(n):
        digits = [grid[r][c] for r, c in unit if grid[r][c]]
        if len(digits) != len(set(digits)):
            return 0

    def solve():
        best = None
        for r in range(n):
            for c in range(n):
                if not grid[r][c]:
                    cand = _candidates(grid, n, b, r, c)
                    if best is None or len(cand) < len(best[2]):
                        best = (r, c, cand)
                        if not cand:
                            return 0
        if best is None:
            return 1
        r, c, cand = best
        total = 0
        for d in cand:
            grid[r][c] = d
            total += solve()
        grid[r][c] = 0
        return total

    return solve()


def random_full_grid(n: int, rng: random.Random) -> list[list[int]]:
    b = box_size(n)
    grid = [[0] * n for _ in range(n)]

    def fill(i):
        if i == n * n:
            return True
        r, c = divmod(i, n)
        cand = _candidates(grid, n, b, r, c)
        rng.shuffle(cand)
        for d in cand:
            grid[r][c] = d
            if fill(i + 1):
                return True
        grid[r][c] = 0
        return False

    fill(0)
    return grid


def gen_sudoku(n: int, k: int, rng: random.Random, oracle: bool = False, seed=None) -> Instance:
    if not 0 <= k <= n * n:
        raise ValueError("k must be between 0 and n*n")
    full = random_full_grid(n, rng)
    revealed = set(rng.sample(range(n * n), k))
    grid = [[full[r][c] if r * n + c in revealed else 0 for c in range(n)] for r in range(n)]
    inst = Instance(encode_sudoku(grid, n), "sudoku", {"n": n, "k": k}, seed, meta={"grid": grid})
    if oracle:
        inst.oracle_count = sudoku_oracle_count(grid, n)
    return inst
