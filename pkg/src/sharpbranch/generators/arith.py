"""Random bit-vector arithmetic sentences ``e1 <op> e2``.

All arithmetic is w-bit with wraparound, comparisons are unsigned and
``absdiff`` is |x - y|. Input variable i, bit j (LSB first) is CNF variable
``i * w + j + 1``; gate outputs are auxiliary variables after those, each
functionally determined by the inputs, so the model count equals the number
of satisfying input vectors.
"""

from __future__ import annotations

import itertools
import random
from typing import Union

from ..formula import CnfFormula
from .common import Instance

COMPARISONS = ("<=", ">=", "<", ">", "==", "!=")
BINARY_OPS = ("add", "sub", "and", "or", "xor", "absdiff")
UNARY_OPS = ("not",)
OPS = BINARY_OPS + UNARY_OPS

Bit = Union[bool, int]  # constant or literal


class Circuit:
    """Tseitin encoder with constant folding and structural hashing."""

    def __init__(self, num_inputs: int):
        self.num_vars = num_inputs
        self.clauses: list[tuple[int, ...]] = []
        self._gates: dict = {}

    def _fresh(self) -> int:
        self.num_vars += 1
        return self.num_vars

    @staticmethod
    def neg(a: Bit) -> Bit:
        return (not a) if isinstance(a, bool) else -a

    def and_(self, a: Bit, b: Bit) -> Bit:
        if a is False or b is False:
            return False
        if a is True:
            return b
        if b is True:
            return a
        if a == b:
            return a
        if a == -b:
            return False
        key = ("and", min(a, b), max(a, b))
        z = self._gates.get(key)
        if z is None:
            z = self._gates[key] = self._fresh()
            self.clauses += [(-z, a), (-z, b), (z, -a, -b)]
        return z

    def or_(self, a: Bit, b: Bit) -> Bit:
        return self.neg(self.and_(self.neg(a), self.neg(b)))

    def xor(self, a: Bit, b: Bit) -> Bit:
        if isinstance(a, bool):
            return self.neg(b) if a else b
        if isinstance(b, bool):
            return self.neg(a) if b else a
        if a == b:
            return False
        if a == -b:
            return True
        # canonical form on positive inputs; negations move to the output
        flip = (a < 0) != (b < 0)
        x, y = sorted((abs(a), abs(b)))
        key = ("xor", x, y)
        z = self._gates.get(key)
        if z is None:
            z = self._gates[key] = self._fresh()
            self.clauses += [(-z, x, y), (-z, -x, -y), (z, -x, y), (z, x, -y)]
        return -z if flip else z

    def mux(self, sel: Bit, hi: Bit, lo: Bit) -> Bit:
        return self.or_(self.and_(sel, hi), self.and_(self.neg(sel), lo))

    # -- words (LSB first) -------------------------------------------------

    def add(self, xs, ys, carry: Bit = False):
        out = []
        for a, b in zip(xs, ys):
            t = self.xor(a, b)
            out.append(self.xor(t, carry))
            carry = self.or_(self.and_(a, b), self.and_(t, carry))
        return out, carry

    def sub(self, xs, ys):
        """Returns (x - y mod 2^w, borrow) where borrow means x < y."""
        out, carry = self.add(xs, [self.neg(y) for y in ys], True)
        return out, self.neg(carry)

    def absdiff(self, xs, ys):
        d1, borrow = self.sub(xs, ys)
        d2, _ = self.sub(ys, xs)
        return [self.mux(borrow, b, a) for a, b in zip(d1, d2)]

    def equal(self, xs, ys) -> Bit:
        acc: Bit = True
        for a, b in zip(xs, ys):
            acc = self.and_(acc, self.neg(self.xor(a, b)))
        return acc

    def less(self, xs, ys) -> Bit:
        return self.sub(xs, ys)[1]


# expression trees: ("var", i) | ("const", c) | (op, child[, child])

def sample_expr(n: int, depth: int, w: int, rng: random.Random, leaf_probability: float = 0.3):
    if depth == 0 or rng.random() < leaf_probability:
        if rng.random() < 0.75:
            return ("var", rng.randrange(n))
        return ("const", rng.randrange(1 << w))
    op = rng.choice(OPS)
    if op in UNARY_OPS:
        return (op, sample_expr(n, depth - 1, w, rng, leaf_probability))
    return (op, sample_expr(n, depth - 1, w, rng, leaf_probability),
            sample_expr(n, depth - 1, w, rng, leaf_probability))


def expr_depth(e) -> int:
    if e[0] in ("var", "const"):
        return 0
    return 1 + max(expr_depth(c) for c in e[1:])


def evaluate(e, values, w: int) -> int:
    mask = (1 << w) - 1
    kind = e[0]
    if kind == "var":
        return values[e[1]]
    if kind == "const":
        return e[1] & mask
    if kind == "not":
        return ~evaluate(e[1], values, w) & mask
    x = evaluate(e[1], values, w)
    y = evaluate(e[2], values, w)
    if kind == "add":
        return (x + y) & mask
    if kind == "sub":
        return (x - y) & mask
    if kind == "and":
        return x & y
    if kind == "or":
        return x | y
    if kind == "xor":
        return x ^ y
    if kind == "absdiff":
        return abs(x - y)
    raise ValueError(f"unknown operator {kind!r}")


def compare(op: str, x: int, y: int) -> bool:
    return {"<=": x <= y, ">=": x >= y, "<": x < y, ">": x > y, "==": x == y, "!=": x != y}[op]


def _encode_expr(circ: Circuit, e, w: int):
    kind = e[0]
    if kind == "var":
        base = e[1] * w
        return [base + j + 1 for j in range(w)]
    if kind == "const":
        return [bool((e[1] >> j) & 1) for j in range(w)]
    if kind == "not":
        return [circ.neg(b) for b in _encode_expr(circ, e[1], w)]
    xs = _encode_expr(circ, e[1], w)
    ys = _encode_expr(circ, e[2], w)
    if kind == "add":
        return circ.add(xs, ys)[0]
    if kind == "sub":
        return circ.sub(xs, ys)[0]
    if kind == "and":
        return [circ.and_(a, b) for a, b in zip(xs, ys)]
    if kind == "or":
        return [circ.or_(a, b) for a, b in zip(xs, ys)]
    if kind == "xor":
        return [circ.xor(a, b) for a, b in zip(xs, ys)]
    if kind == "absdiff":
        return circ.absdiff(xs, ys)
    raise ValueError(f"unknown operator {kind!r}")


def encode_sentence(op: str, lhs, rhs, n: int, w: int) -> CnfFormula:
    circ = Circuit(n * w)
    xs = _encode_expr(circ, lhs, w)
    ys = _encode_expr(circ, rhs, w)
    if op == "==":
        out = circ.equal(xs, ys)
    elif op == "!=":
        out = circ.neg(circ.equal(xs, ys))
    elif op == "<":
        out = circ.less(xs, ys)
    elif op == ">":
        out = circ.less(ys, xs)
    elif op == "<=":
        out = circ.neg(circ.less(ys, xs))
    elif op == ">=":
        out = circ.neg(circ.less(xs, ys))
    else:
        raise ValueError(f"unknown comparison {op!r}")
    clauses = list(circ.clauses)
    if out is False:
        z = circ._fresh()
        clauses += [(z,), (-z,)]
    elif out is not True:
        clauses.append((out,))
    return CnfFormula.from_clauses(circ.num_vars, clauses)


def arith_oracle_count(op: str, lhs, rhs, n: int, w: int) -> int:
    """Enumerate all (2^w)^n input vectors."""
    if n * w > 24:
        raise ValueError("input enumeration limited to n*w <= 24")
    return sum(
        compare(op, evaluate(lhs, vals, w), evaluate(rhs, vals, w))
        for vals in itertools.product(range(1 << w), repeat=n)
    )


def gen_arith(n: int, d: int, w: int, rng: random.Random, oracle: bool = False, seed=None) -> Instance:
    if n < 1 or d < 1 or w < 1:
        raise ValueError("arith needs n, d, w >= 1")
    op = rng.choice(COMPARISONS)
    lhs = sample_expr(n, d, w, rng)
    rhs = sample_expr(n, d, w, rng)
    inst = Instance(encode_sentence(op, lhs, rhs, n, w), "arith", {"n": n, "d": d, "w": w}, seed,
                    meta={"op": op, "lhs": lhs, "rhs": rhs})
    if oracle:
        inst.oracle_count = arith_oracle_count(op, lhs, rhs, n, w)
    return inst
