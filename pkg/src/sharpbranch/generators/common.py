from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..formula import CnfFormula


@dataclass
class Instance:
    formula: CnfFormula
    family: str
    params: dict
    seed: Optional[int] = None
    oracle_count: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return instance_filename(self.family, self.params, self.seed)


def instance_filename(family: str, params: dict, seed) -> str:
    tag = "-".join(str(v) for v in params.values())
    return f"{family}_{tag}_{seed}.cnf"


def pairwise_at_most_one(lits) -> list[tuple[int, int]]:
    lits = list(lits)
    return [(-lits[i], -lits[j]) for i in range(len(lits)) for j in range(i + 1, len(lits))]


def exactly_one(lits) -> list[tuple[int, ...]]:
    lits = list(lits)
    return [tuple(lits)] + pairwise_at_most_one(lits)
