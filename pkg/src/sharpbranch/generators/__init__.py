"""Benchmark families and a small dispatcher that writes datasets to disk.

Each family is addressed by name with its parameters in a fixed order:
``cell(rule, n, r)``, ``grid(s, t)``, ``sudoku(n, k)``, ``arith(n, d, w)``.
"""

from __future__ import annotations

import json
import os
import random
from typing import Optional

from ..formula import CnfFormula, read_dimacs, write_dimacs
from .arith import gen_arith
from .cell import gen_cell
from .common import Instance, instance_filename
from .grid import GenerationError, gen_grid
from .sudoku import gen_sudoku

FAMILIES = {
    "cell": (gen_cell, ("rule", "n", "r")),
    "grid": (gen_grid, ("s", "t")),
    "sudoku": (gen_sudoku, ("n", "k")),
    "arith": (gen_arith, ("n", "d", "w")),
}

MANIFEST_NAME = "manifest.jsonl"


def instance_seed(base_seed: int, index: int) -> int:
    return base_seed * 1_000_000 + index


def generate(family: str, params: dict, seed: int, oracle: bool = False) -> Instance:
    try:
        fn, names = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}") from None
    missing = [k for k in names if k not in params]
    extra = [k for k in params if k not in names]
    if missing or extra:
        raise ValueError(f"{family} takes parameters {names}, got {sorted(params)}")
    args = [int(params[k]) for k in names]
    return fn(*args, random.Random(seed), oracle=oracle, seed=seed)


def split_of(index: int, count: int, test_fraction: float = 0.1) -> str:
    """The last ``round(count * test_fraction)`` instances form the test split."""
    n_test = round(count * test_fraction)
    return "test" if index >= count - n_test else "train"


def write_dataset(family: str, params: dict, count: int, seed: int, outdir,
                  oracle: bool = False, test_fraction: float = 0.1) -> list[dict]:
    os.makedirs(outdir, exist_ok=True)
    ordered = {k: int(params[k]) for k in FAMILIES[family][1]} if family in FAMILIES else params
    rows = []
    for i in range(count):
        s = instance_seed(seed, i)
        inst = generate(family, ordered, s, oracle)
        write_dimacs(inst.formula, os.path.join(outdir, inst.name))
        row = {"file": inst.name, "family": family, "params": ordered, "seed": s,
               "split": split_of(i, count, test_fraction)}
        if inst.oracle_count is not None:
            row["oracle_count"] = str(inst.oracle_count)
        rows.append(row)
    with open(os.path.join(outdir, MANIFEST_NAME), "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return rows


def read_manifest(path) -> list[dict]:
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                row["path"] = os.path.join(os.path.dirname(path), row["file"])
                rows.append(row)
    return rows


def load_split(path, split: Optional[str] = None) -> tuple[list[dict], list[CnfFormula]]:
    rows = [r for r in read_manifest(path) if split is None or r.get("split") == split]
    return rows, [read_dimacs(r["path"]) for r in rows]


__all__ = [
    "FAMILIES", "GenerationError", "Instance", "MANIFEST_NAME", "generate", "instance_filename",
    "instance_seed", "load_split", "read_manifest", "split_of", "write_dataset",
]
