"""Evolution strategies training of the branching policy.

Each iteration draws a batch of training formulas and ``n_directions``
Gaussian directions, evaluates both mirrored offspring ``theta +/- sigma*eps``
on the same batch, rank-normalizes the fitnesses and feeds the resulting
gradient estimate to Adam (ascent) with decoupled weight decay.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .counting import count_sharp
from .formula import CnfFormula
from .policy import PolicyConfig, PolicyHeuristic, PolicyParams, init_params, read_params, write_params

log = logging.getLogger(__name__)

LOG_FIELDS = ("iter", "mean_fitness", "max_fitness", "mean_decisions", "solved_frac")
ADAM_MAGIC = b"ADAM"


@dataclass
class EsConfig:
    sigma: float = 0.02
    n_directions: int = 48
    batch_size: int = 8
    lr: float = 0.01
    weight_decay: float = 0.005
    train_step_cap: int = 1000
    eval_step_cap: int = 100_000
    r_penalty: float = -1e-4
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.train_step_cap < 1 or self.eval_step_cap < 1:
            raise ValueError("step caps must be at least 1")
        if self.n_directions < 1 or self.batch_size < 1:
            raise ValueError("n_directions and batch_size must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


@dataclass(frozen=True)
class EpisodeTrace:
    solved: bool
    decisions: int
    reward: float


def episode_reward(decisions: int, solved: bool, r_penalty: float = -1e-4) -> float:
    return decisions * r_penalty + (1.0 if solved else 0.0)


def run_episode(formula: CnfFormula, params: PolicyParams, cap: int,
                r_penalty: float = -1e-4) -> EpisodeTrace:
    """Solve ``formula`` with the policy; every branching decision costs
    ``r_penalty`` and finishing within ``cap`` decisions earns 1."""
    res = count_sharp(formula, PolicyHeuristic(params), max_decisions=cap)
    return EpisodeTrace(res.solved, res.decisions, episode_reward(res.decisions, res.solved, r_penalty))


def evaluate_batch(flat, formulas: Sequence[CnfFormula], config: PolicyConfig, cap: int,
                   r_penalty: float = -1e-4) -> list[EpisodeTrace]:
    params = PolicyParams(flat, config)
    return [run_episode(f, params, cap, r_penalty) for f in formulas]


def fitness(flat, formulas: Sequence[CnfFormula], config: PolicyConfig, cap: int = 1000,
            r_penalty: float = -1e-4) -> float:
    """Mean episodic reward over the batch."""
    if not formulas:
        raise ValueError("empty formula batch")
    traces = evaluate_batch(flat, formulas, config, cap, r_penalty)
    return sum(t.reward for t in traces) / len(traces)


def rank_normalize(fitnesses) -> np.ndarray:
    """Map fitnesses to rank/(n-1) - 0.5 (worst gets -0.5), averaging tied ranks."""
    f = np.asarray(fitnesses, dtype=np.float64)
    if f.size < 2:
        raise ValueError("rank normalization needs at least two values")
    ranks = rankdata(f, method="average") - 1.0
    return ranks / (f.size - 1) - 0.5


def es_update(perturbations, weights, sigma: float) -> np.ndarray:
    """Gradient estimate ``(1 / (n * sigma)) * sum_i w_i * eps_i`` over all n
    offspring; a mirrored pair appears as two rows ``+eps`` and ``-eps``."""
    eps = np.asarray(perturbations, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if eps.ndim != 2 or eps.shape[0] != w.shape[0]:
        raise ValueError(f"{w.shape[0]} weights for {eps.shape[0]} perturbations")
    return (w @ eps) / (w.shape[0] * sigma)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def adam_step(state: AdamState, theta, g, lr: float, weight_decay: float = 0.0) -> np.ndarray:
    """One Adam ascent step on ``g`` followed by ``theta *= 1 - lr * weight_decay``.
    Updates ``state`` in place and returns the new parameters."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if theta.shape != g.shape or state.m.shape != g.shape:
        raise ValueError("shape mismatch between parameters, gradient and Adam state")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    new = theta + lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new * (1.0 - lr * weight_decay)


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path, params: PolicyParams, adam: AdamState) -> None:
    with open(path, "wb") as fh:
        write_params(fh, params)
        fh.write(ADAM_MAGIC)
        fh.write(struct.pack("<Qddd", adam.t, adam.beta1, adam.beta2, adam.eps))
        fh.write(adam.m.astype("<f8").tobytes())
        fh.write(adam.v.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[PolicyParams, AdamState]:
    with open(path, "rb") as fh:
        params = read_params(fh)
        if fh.read(4) != ADAM_MAGIC:
            raise ValueError("checkpoint has no optimizer state")
        t, b1, b2, eps = struct.unpack("<Qddd", fh.read(32))
        n = len(params)
        m = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
        v = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
        if m.size != n or v.size != n:
            raise ValueError("truncated optimizer state")
    return params, AdamState(m, v, t, b1, b2, eps)


# -- parallel offspring evaluation ------------------------------------------

_worker_formulas: list[CnfFormula] = []


def _init_worker(formulas):
    global _worker_formulas
    _worker_formulas = formulas


def _offspring_job(args):
    flat, indices, config, cap, r_penalty = args
    return evaluate_batch(flat, [_worker_formulas[i] for i in indices], config, cap, r_penalty)


class OffspringEvaluator:
    """Evaluates offspring in order, inline or on a process pool."""

    def __init__(self, formulas: Sequence[CnfFormula], workers: int = 1):
        self.formulas = list(formulas)
        self.workers = workers
        self._pool = None
        if workers > 1:
            ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
            self._pool = ctx.Pool(workers, initializer=_init_worker, initargs=(self.formulas,))

    def evaluate(self, flats, indices, config, cap, r_penalty) -> list[list[EpisodeTrace]]:
        jobs = [(flat, list(indices), config, cap, r_penalty) for flat in flats]
        if self._pool is None:
            _init_worker(self.formulas)
            return [_offspring_job(j) for j in jobs]
        return self._pool.map(_offspring_job, jobs)

    def close(self):
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class TrainResult:
    params: PolicyParams
    adam: AdamState
    log: list[dict] = field(default_factory=list)
    timing: list[float] = field(default_factory=list)


def initial_params(policy_config: PolicyConfig, seed: int) -> PolicyParams:
    return init_params(policy_config, np.random.default_rng([seed, 0]))


def train(formulas: Sequence[CnfFormula], es: EsConfig, policy_config: Optional[PolicyConfig] = None,
          params: Optional[PolicyParams] = None, adam: Optional[AdamState] = None, workers: int = 1,
          checkpoint_path=None, checkpoint_every: int = 1,
          on_iteration: Optional[Callable[[dict, float], None]] = None) -> TrainResult:
    """Run ES from ``params`` (default: seeded random init) until ``es.iterations``
    Adam steps have been taken in total; ``adam.t`` counts steps already done,
    so passing a loaded checkpoint resumes the same trajectory.

    ``on_iteration(row, wall_seconds)`` is called after every step."""
    if not formulas:
        raise ValueError("empty training set")
    if params is None:
        params = initial_params(policy_config or PolicyConfig(), es.seed)
    config = params.config
    theta = params.flat.copy()
    if adam is None:
        adam = AdamState.zeros(theta.size)
    result = TrainResult(params, adam)
    n_off = 2 * es.n_directions
    with OffspringEvaluator(formulas, workers) as evaluator:
        while adam.t < es.iterations:
            it = adam.t
            start = time.perf_counter()
            rng = np.random.default_rng([es.seed, 1, it])
            replace = len(formulas) < es.batch_size
            batch = rng.choice(len(formulas), size=es.batch_size, replace=replace)
            noise = rng.standard_normal((es.n_directions, theta.size))
            signed = np.empty((n_off, theta.size))
            signed[0::2] = noise
            signed[1::2] = -noise
            flats = [theta + es.sigma * row for row in signed]
            traces = evaluator.evaluate(flats, batch, config, es.train_step_cap, es.r_penalty)
            fits = np.array([sum(t.reward for t in tr) / len(tr) for tr in traces])
            g = es_update(signed, rank_normalize(fits), es.sigma)
            theta = adam_step(adam, theta, g, es.lr, es.weight_decay)
            episodes = [t for tr in traces for t in tr]
            row = {
                "iter": it,
                "mean_fitness": float(fits.mean()),
                "max_fitness": float(fits.max()),
                "mean_decisions": sum(t.decisions for t in episodes) / len(episodes),
                "solved_frac": sum(t.solved for t in episodes) / len(episodes),
            }
            result.params = PolicyParams(theta, config)
            result.log.append(row)
            wall = time.perf_counter() - start
            result.timing.append(wall)
            log.info("iter %d mean %.6f max %.6f decisions %.1f", it, row["mean_fitness"],
                     row["max_fitness"], row["mean_decisions"])
            if checkpoint_path is not None and (adam.t % checkpoint_every == 0 or adam.t == es.iterations):
                save_checkpoint(checkpoint_path, result.params, adam)
            if on_iteration is not None:
                on_iteration(row, wall)
    return result


def format_log_row(row: dict, wall_seconds: Optional[float] = None) -> str:
    cells = [str(row["iter"]), repr(row["mean_fitness"]), repr(row["max_fitness"]),
             repr(row["mean_decisions"]), repr(row["solved_frac"])]
    if wall_seconds is not None:
        cells.append(f"{wall_seconds:.6f}")
    return ",".join(cells)
