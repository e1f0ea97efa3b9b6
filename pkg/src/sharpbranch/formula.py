"""CNF formulas, DIMACS I/O and a counter-based propagation trail.

Literals are signed ints in the DIMACS convention: ``v`` is the positive
literal of variable ``v`` and ``-v`` its negation.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence


class DimacsError(ValueError):
    """Malformed DIMACS input. ``line`` is 1-based, or None if unknown."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TrailError(RuntimeError):
    pass


def normalize_clause(lits: Iterable[int]) -> Optional[tuple[int, ...]]:
    """Drop repeated literals (keeping first occurrence); None for tautologies."""
    seen: set[int] = set()
    out = []
    for lit in lits:
        if -lit in seen:
            return None
        if lit not in seen:
            seen.add(lit)
            out.append(lit)
    return tuple(out)


@dataclass(frozen=True, eq=True)
class CnfFormula:
    num_vars: int
    clauses: tuple[tuple[int, ...], ...]
    # semantic features: var -> normalized time in [0, 1], var -> (row, col)
    time: dict[int, float] = field(default_factory=dict)
    coord: dict[int, tuple[int, int]] = field(default_factory=dict)

    __hash__ = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.num_vars < 0:
            raise ValueError("num_vars must be non-negative")
        for clause in self.clauses:
            if not clause:
                raise ValueError("empty clause")
            for lit in clause:
                if lit == 0 or abs(lit) > self.num_vars:
                    raise ValueError(f"literal {lit} out of range for {self.num_vars} variables")
        for var in list(self.time) + list(self.coord):
            if not 1 <= var <= self.num_vars:
                raise ValueError(f"annotation for invalid variable {var}")

    @classmethod
    def from_clauses(cls, num_vars: int, clauses: Iterable[Iterable[int]], time=None, coord=None) -> "CnfFormula":
        """Build a normalized formula (duplicate literals and tautologies removed)."""
        normalized = []
        for clause in clauses:
            c = normalize_clause(clause)
            if c is not None:
                normalized.append(c)
        return cls(num_vars, tuple(normalized), dict(time or {}), dict(coord or {}))

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    def variables_in_clauses(self) -> set[int]:
        return {abs(lit) for clause in self.clauses for lit in clause}


def parse_dimacs(text) -> CnfFormula:
    """Parse DIMACS CNF from a string or a text stream.

    Besides plain comments, two annotation comments are understood::

        c feature time <var> <float>
        c feature coord <var> <row> <col>
    """
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = text.read().splitlines()

    num_vars = None
    declared_clauses = None
    time: dict[int, float] = {}
    coord: dict[int, tuple[int, int]] = {}
    pending_annotations: list[tuple[int, int]] = []
    clauses: list[tuple[int, ...]] = []
    current: list[int] = []

    def as_int(tok: str, lineno: int) -> int:
        try:
            return int(tok)
        except ValueError:
            raise DimacsError(f"non-numeric token {tok!r}", lineno) from None

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("c"):
            toks = line.split()
            if len(toks) >= 3 and toks[0] == "c" and toks[1] == "feature":
                kind = toks[2]
                if kind == "time" and len(toks) == 5:
                    var = as_int(toks[3], lineno)
                    try:
                        value = float(toks[4])
                    except ValueError:
                        raise DimacsError(f"non-numeric token {toks[4]!r}", lineno) from None
                    time[var] = value
                elif kind == "coord" and len(toks) == 6:
                    var = as_int(toks[3], lineno)
                    coord[var] = (as_int(toks[4], lineno), as_int(toks[5], lineno))
                else:
                    raise DimacsError(f"malformed feature line {line!r}", lineno)
                pending_annotations.append((var, lineno))
            continue
        if line.startswith("p"):
            toks = line.split()
            if num_vars is not None:
                raise DimacsError("duplicate header", lineno)
            if len(toks) != 4 or toks[0] != "p" or toks[1] != "cnf":
                raise DimacsError(f"malformed header {line!r}", lineno)
            num_vars = as_int(toks[2], lineno)
            declared_clauses = as_int(toks[3], lineno)
            if num_vars < 0 or declared_clauses < 0:
                raise DimacsError("negative counts in header", lineno)
            continue
        if line.startswith("%"):
            # end marker used by some benchmark suites
            break
        if num_vars is None:
            raise DimacsError("clause before header", lineno)
        for tok in line.split():
            if tok == "-0":
                raise DimacsError("literal index 0 inside clause", lineno)
            lit = as_int(tok, lineno)
            if lit == 0:
                if not current:
                    raise DimacsError("empty clause", lineno)
                c = normalize_clause(current)
                if c is not None:
                    clauses.append(c)
                current = []
                continue
            if abs(lit) > num_vars:
                raise DimacsError(f"variable {abs(lit)} exceeds declared {num_vars}", lineno)
            current.append(lit)

    if num_vars is None:
        raise DimacsError("missing header")
    if current:
        c = normalize_clause(current)
        if c is not None:
            clauses.append(c)
    for var, lineno in pending_annotations:
        if not 1 <= var <= num_vars:
            raise DimacsError(f"annotation for invalid variable {var}", lineno)
    return CnfFormula(num_vars, tuple(clauses), time, coord)


def read_dimacs(path) -> CnfFormula:
    with open(path, encoding="utf-8") as fh:
        return parse_dimacs(fh)


def serialize_dimacs(formula: CnfFormula) -> str:
    out = io.StringIO()
    for var in sorted(formula.time):
        out.write(f"c feature time {var} {formula.time[var]!r}\n")
    for var in sorted(formula.coord):
        row, col = formula.coord[var]
        out.write(f"c feature coord {var} {row} {col}\n")
    out.write(f"p cnf {formula.num_vars} {len(formula.clauses)}\n")
    for clause in formula.clauses:
        out.write(" ".join(map(str, clause)))
        out.write(" 0\n")
    return out.getvalue()


def write_dimacs(formula: CnfFormula, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_dimacs(formula))


class PropagationResult(NamedTuple):
    forced: tuple[int, ...]
    conflict: bool


class Trail:
    """Assignment trail over an immutable formula.

    Per clause we keep the number of true and false literals; a clause is
    satisfied iff its true count is positive, unit iff it is unsatisfied
    with exactly one unassigned literal. Each :meth:`unit_propagate` pushes a
    frame that :meth:`undo` reverts exactly.
    """

    def __init__(self, formula: CnfFormula):
        self.formula = formula
        n = formula.num_vars
        self.num_vars = n
        self.clauses = formula.clauses
        m = len(self.clauses)
        self.value = [0] * (n + 1)  # +1 true, -1 false, 0 unset
        self.n_true = [0] * m
        self.n_false = [0] * m
        self.size = [len(c) for c in self.clauses]
        self.num_active = m
        self.num_unset = n
        # occ[lit + n] -> clause ids containing lit
        occ: list[list[int]] = [[] for _ in range(2 * n + 1)]
        for cid, clause in enumerate(self.clauses):
            for lit in clause:
                occ[lit + n].append(cid)
        self.occ = occ
        self.var_occ = [occ[v + n] + occ[n - v] for v in range(n + 1)]
        self.frames: list[list[int]] = []

    # -- queries -------------------------------------------------------

    def lit_value(self, lit: int) -> int:
        val = self.value[lit if lit > 0 else -lit]
        return val if lit > 0 else -val

    def is_active(self, cid: int) -> bool:
        return self.n_true[cid] == 0

    def active_clause_ids(self) -> list[int]:
        nt = self.n_true
        return [cid for cid in range(len(nt)) if nt[cid] == 0]

    def unassigned_literals(self, cid: int) -> list[int]:
        value = self.value
        return [lit for lit in self.clauses[cid] if value[abs(lit)] == 0]

    @property
    def depth(self) -> int:
        return len(self.frames)

    def snapshot(self) -> tuple:
        """Full mutable state, for equality checks in tests."""
        return (tuple(self.value), tuple(self.n_true), tuple(self.n_false),
                self.num_active, self.num_unset, len(self.frames))

    # -- propagation ---------------------------------------------------

    def unit_propagate(self, decision: int) -> PropagationResult:
        if decision == 0 or abs(decision) > self.num_vars:
            raise TrailError(f"invalid literal {decision}")
        if self.value[abs(decision)] != 0:
            raise TrailError(f"variable {abs(decision)} already assigned")
        frame: list[int] = []
        self.frames.append(frame)
        conflict = self._propagate([decision], frame)
        return PropagationResult(tuple(frame), conflict)

    def propagate_units(self) -> PropagationResult:
        """Push a frame propagating the formula's unit clauses (and any clause
        that is currently unit)."""
        frame: list[int] = []
        self.frames.append(frame)
        queue = []
        for cid, clause in enumerate(self.clauses):
            if self.n_true[cid] == 0:
                free = self.size[cid] - self.n_false[cid]
                if free == 0:
                    return PropagationResult((), True)
                if free == 1:
                    queue.extend(self.unassigned_literals(cid))
        conflict = self._propagate(queue, frame)
        return PropagationResult(tuple(frame), conflict)

    def _propagate(self, queue: list[int], frame: list[int]) -> bool:
        value = self.value
        n_true = self.n_true
        n_false = self.n_false
        size = self.size
        occ = self.occ
        clauses = self.clauses
        n = self.num_vars
        i = 0
        while i < len(queue):
            lit = queue[i]
            i += 1
            if lit > 0:
                var, want = lit, 1
            else:
                var, want = -lit, -1
            cur = value[var]
            if cur == want:
                continue
            if cur == -want:
                return True
            value[var] = want
            frame.append(lit)
            self.num_unset -= 1
            for cid in occ[lit + n]:
                if n_true[cid] == 0:
                    self.num_active -= 1
                n_true[cid] += 1
            conflict = False
            for cid in occ[n - lit]:
                nf = n_false[cid] + 1
                n_false[cid] = nf
                if n_true[cid] == 0 and not conflict:
                    free = size[cid] - nf
                    if free == 0:
                        conflict = True
                    elif free == 1:
                        for other in clauses[cid]:
                            if value[other if other > 0 else -other] == 0:
                                queue.append(other)
                                break
            if conflict:
                return True
        return False

    def undo(self) -> None:
        if not self.frames:
            raise TrailError("undo on empty trail")
        frame = self.frames.pop()
        value = self.value
        n_true = self.n_true
        n_false = self.n_false
        occ = self.occ
        n = self.num_vars
        for lit in reversed(frame):
            value[lit if lit > 0 else -lit] = 0
            self.num_unset += 1
            for cid in occ[lit + n]:
                n_true[cid] -= 1
                if n_true[cid] == 0:
                    self.num_active += 1
            for cid in occ[n - lit]:
                n_false[cid] -= 1


def free_variable_count(trail: Trail, scope=None) -> int:
    """Unset variables in ``scope``: a component (its variable set) or, when
    None, the whole formula including variables that occur in no clause."""
    if scope is None:
        return trail.num_unset
    value = trail.value
    return sum(1 for v in scope.vars if value[v] == 0)


def negate_formula(formula: CnfFormula) -> CnfFormula:
    """Flip the polarity of every literal."""
    return CnfFormula(formula.num_vars, tuple(tuple(-l for l in c) for c in formula.clauses),
                      dict(formula.time), dict(formula.coord))


def rename_formula(formula: CnfFormula, perm: Sequence[int]) -> CnfFormula:
    """Rename variable ``v`` to ``perm[v]`` (``perm[0]`` is ignored)."""
    def ren(lit):
        return perm[lit] if lit > 0 else -perm[-lit]

    return CnfFormula(
        formula.num_vars,
        tuple(tuple(ren(l) for l in c) for c in formula.clauses),
        {perm[v]: t for v, t in formula.time.items()},
        {perm[v]: rc for v, rc in formula.coord.items()},
    )
