"""Batch evaluation of engine/heuristic configurations and the derived tables."""

from __future__ import annotations

import multiprocessing as mp
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .counting import RandomLiteral, count, pick_occurrence_max
from .formula import CnfFormula
from .policy import PolicyHeuristic, load_params

CACTUS_FIELDS = ("config", "solve_index", "decisions", "aborted")
HEATMAP_FIELDS = ("row", "col", "mean_first_decision")
NEVER_DECIDED = 1.0

_loaded_params: dict = {}


def make_heuristic(name: str, seed: int = 0):
    """``occ``, ``random`` or ``policy:<paramfile>``."""
    if name == "occ":
        return pick_occurrence_max
    if name == "random":
        return RandomLiteral(seed)
    if name.startswith("policy:"):
        path = name[len("policy:"):]
        if path not in _loaded_params:
            _loaded_params[path] = load_params(path)
        return PolicyHeuristic(_loaded_params[path])
    raise ValueError(f"unknown heuristic {name!r}")


def config_name(engine: str, heuristic: str) -> str:
    return f"{engine}/{heuristic}"


@dataclass
class EvalReport:
    records: list[dict] = field(default_factory=list)

    def configs(self) -> list[str]:
        seen = []
        for r in self.records:
            if r["config"] not in seen:
                seen.append(r["config"])
        return seen

    def aggregates(self) -> dict[str, dict]:
        out = {}
        for cfg in self.configs():
            rs = [r for r in self.records if r["config"] == cfg]
            out[cfg] = {
                "instances": len(rs),
                "mean_decisions": sum(r["decisions"] for r in rs) / len(rs),
                "solved_frac": sum(not r["aborted"] for r in rs) / len(rs),
            }
        return out


def _eval_job(args):
    formula, engine, heuristic, seed, cap = args
    return count(formula, engine, make_heuristic(heuristic, seed), max_decisions=cap)


def evaluate(files: Sequence[str], formulas: Sequence[CnfFormula], configs: Sequence[tuple[str, str]],
             cap: int = 100_000, seed: int = 0, threads: int = 1) -> EvalReport:
    """Run every (engine, heuristic) pair on every formula. Records come out
    grouped by configuration, then in input order, whatever ``threads`` is."""
    jobs, keys = [], []
    for engine, heuristic in configs:
        for i, (name, f) in enumerate(zip(files, formulas)):
            jobs.append((f, engine, heuristic, seed * 1_000_003 + i, cap))
            keys.append((name, engine, heuristic, i))
    if threads > 1:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
        with ctx.Pool(threads) as pool:
            results = pool.map(_eval_job, jobs)
    else:
        results = [_eval_job(j) for j in jobs]
    report = EvalReport()
    for (name, engine, heuristic, i), res in zip(keys, results):
        rec = {"file": name, "index": i, "engine": engine, "heuristic": heuristic,
               "config": config_name(engine, heuristic)}
        rec.update(res.record())
        rec["first_decision"] = dict(res.per_var_first_decision)
        report.records.append(rec)
    return report


def cactus_rows(records: Sequence[dict]) -> list[tuple[str, int, int, int]]:
    """Per configuration, decision counts sorted ascending with a 1-based index.
    Aborted runs sit at the cap, which is where the engine stopped counting."""
    by_config: dict[str, list[tuple[int, int]]] = defaultdict(list)
    order = []
    for r in records:
        if r["config"] not in by_config:
            order.append(r["config"])
        by_config[r["config"]].append((r["decisions"], int(r["aborted"])))
    rows = []
    for cfg in order:
        for k, (d, aborted) in enumerate(sorted(by_config[cfg]), start=1):
            rows.append((cfg, k, d, aborted))
    return rows


def heatmap_rows(records: Sequence[dict], formulas: Sequence[CnfFormula],
                 config: Optional[str] = None) -> list[tuple[int, int, float]]:
    """Mean normalized first-decision step per (row, col) coordinate.

    A variable first decided at step ``k`` of an episode with ``D`` decisions
    contributes ``k / D``; variables never decided contribute 1.0. ``records``
    must hold one record per formula (filter by ``config`` otherwise)."""
    if config is not None:
        records = [r for r in records if r["config"] == config]
    if len(records) != len(formulas):
        raise ValueError(f"{len(records)} records for {len(formulas)} formulas")
    sums: dict[tuple[int, int], float] = defaultdict(float)
    counts: dict[tuple[int, int], int] = defaultdict(int)
    for rec, f in zip(records, formulas):
        if not f.coord:
            raise ValueError("heatmap needs coord annotations (cell family)")
        total = rec["decisions"]
        first = rec["first_decision"]
        for v, rc in f.coord.items():
            step = first.get(v)
            sums[rc] += NEVER_DECIDED if step is None else step / total
            counts[rc] += 1
    return [(rc[0], rc[1], sums[rc] / counts[rc]) for rc in sorted(sums)]
