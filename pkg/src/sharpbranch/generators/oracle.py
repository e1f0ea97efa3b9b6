"""Brute-force ground truth by enumerating every truth assignment."""

import numpy as np

from ..formula import CnfFormula

MAX_ORACLE_VARS = 24
_CHUNK_BITS = 20


def oracle_count(formula: CnfFormula, max_vars: int = MAX_ORACLE_VARS) -> int:
    """Count satisfying assignments of ``formula`` by exhaustive enumeration.

    Variables are enumerated in chunks of 2**20 assignments; bit ``v-1`` of
    the assignment index is the value of variable ``v``.
    """
    n = formula.num_vars
    if n > max_vars:
        raise ValueError(f"oracle limited to {max_vars} variables, formula has {n}")
    if not formula.clauses:
        return 1 << n
    total = 1 << n
    chunk = min(total, 1 << _CHUNK_BITS)
    count = 0
    base = np.arange(chunk, dtype=np.int64)
    for offset in range(0, total, chunk):
        idx = base + offset
        bits = {}
        ok = np.ones(chunk, dtype=bool)
        for clause in formula.clauses:
            sat = np.zeros(chunk, dtype=bool)
            for lit in clause:
                v = abs(lit)
                b = bits.get(v)
                if b is None:
                    b = bits[v] = ((idx >> (v - 1)) & 1).astype(bool)
                sat |= b if lit > 0 else ~b
            ok &= sat
        count += int(ok.sum())
    return count
