"""Lava-avoiding trajectories in a grid world.

The agent starts on a safe square and takes ``t`` moves (N, S, E, W); a move
off the grid leaves it in place. Each safe action sequence is one model.

Variables: position one-hot ``pos(k, p)`` for steps ``k = 0..t`` and squares
``p = row * s + col``, then two action bits per step ``k = 0..t-1``.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass

from ..formula import CnfFormula
from .common import Instance, exactly_one

# action index = 2 * high bit + low bit
MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1))  # N, S, E, W
LAVA_PROBABILITY = 0.25
MAX_RESAMPLES = 100


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridWorld:
    size: int
    lava: frozenset  # of (row, col)
    start: tuple[int, int]

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("grid size must be at least 2")
        if self.start in self.lava:
            raise ValueError("start square must be safe")

    def is_safe(self, square) -> bool:
        return square not in self.lava

    def step(self, square, action: int) -> tuple[int, int]:
        dr, dc = MOVES[action]
        r, c = square[0] + dr, square[1] + dc
        if 0 <= r < self.size and 0 <= c < self.size:
            return (r, c)
        return square

    def squares(self):
        return itertools.product(range(self.size), repeat=2)


def grid_oracle_count(world: GridWorld, t: int) -> int:
    """Number of length-t action sequences whose path stays on safe squares."""
    counts = {world.start: 1}
    for _ in range(t):
        nxt: dict = {}
        for square, ways in counts.items():
            for action in range(4):
                q = world.step(square, action)
                if world.is_safe(q):
                    nxt[q] = nxt.get(q, 0) + ways
        counts = nxt
    return sum(counts.values())


def encode_grid(world: GridWorld, t: int) -> CnfFormula:
    if t < 1:
        raise ValueError("need at least one step")
    s = world.size
    cells = s * s

    def pos(k, square):
        return k * cells + square[0] * s + square[1] + 1

    def act(k, bit):
        return (t + 1) * cells + 2 * k + bit + 1

    clauses: list[tuple[int, ...]] = [(pos(0, world.start),)]
    squares = list(world.squares())
    for k in range(t + 1):
        clauses += exactly_one(pos(k, q) for q in squares)
        clauses += [(-pos(k, q),) for q in squares if not world.is_safe(q)]
    for k in range(t):
        hi, lo = act(k, 1), act(k, 0)
        for p in squares:
            if not world.is_safe(p):
                continue
            for a in range(4):
                q = world.step(p, a)
                # pos(k,p) and action a imply pos(k+1,q)
                not_a = (-hi if a & 2 else hi, -lo if a & 1 else lo)
                clauses.append((-pos(k, p), *not_a, pos(k + 1, q)))
    num_vars = (t + 1) * cells + 2 * t
    time = {}
    for k in range(t + 1):
        for q in squares:
            time[pos(k, q)] = k / t
    for k in range(t):
        time[act(k, 0)] = time[act(k, 1)] = k / t
    return CnfFormula.from_clauses(num_vars, clauses, time=time)


def sample_world(s: int, rng: random.Random) -> GridWorld:
    for _ in range(MAX_RESAMPLES):
        lava = frozenset(q for q in itertools.product(range(s), repeat=2)
                         if rng.random() < LAVA_PROBABILITY)
        start = (rng.randrange(s), rng.randrange(s))
        if start in lava:
            continue
        neighbours = [(start[0] + dr, start[1] + dc) for dr, dc in MOVES]
        if any(0 <= r < s and 0 <= c < s and (r, c) not in lava for r, c in neighbours):
            return GridWorld(s, lava, start)
    raise GenerationError(f"no usable {s}x{s} terrain after {MAX_RESAMPLES} samples")


def gen_grid(s: int, t: int, rng: random.Random, oracle: bool = False, seed=None) -> Instance:
    if s < 2 or t < 1:
        raise ValueError("grid needs s >= 2 and t >= 1")
    world = sample_world(s, rng)
    inst = Instance(encode_grid(world, t), "grid", {"s": s, "t": t}, seed,
                    meta={"lava": sorted(world.lava), "start": list(world.start)})
    if oracle:
        inst.oracle_count = grid_oracle_count(world, t)
    return inst
