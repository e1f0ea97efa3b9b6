import random

import numpy as np
import pytest

from sharpbranch.formula import CnfFormula
from sharpbranch.generators import generate
from sharpbranch.policy import PolicyConfig, PolicyParams, init_params, zero_params
from sharpbranch.training import (
    AdamState, EsConfig, adam_step, es_update, episode_reward, evaluate_batch, fitness,
    initial_params, load_checkpoint, rank_normalize, run_episode, save_checkpoint, train,
)

SMALL = PolicyConfig(embed_dim=4, message_hidden=4, decision_hidden=(8,))
UNITS = CnfFormula(3, ((1,), (-1, 2), (-2, 3)))


def chain(n):
    return CnfFormula(n, tuple((i, i + 1) for i in range(1, n)))


def cell_set(rule, count, n=8, r=3):
    return [generate("cell", {"rule": rule, "n": n, "r": r}, i).formula for i in range(count)]


def test_es_config_validation():
    with pytest.raises(ValueError):
        EsConfig(sigma=0)
    with pytest.raises(ValueError):
        EsConfig(train_step_cap=0)


def test_episode_solved_by_propagation():
    trace = run_episode(UNITS, zero_params(SMALL), cap=10)
    assert trace.solved and trace.decisions == 0 and trace.reward == 1.0


def test_episode_aborted_at_cap():
    trace = run_episode(chain(30), zero_params(SMALL), cap=10)
    assert not trace.solved
    assert trace.decisions == 10
    assert trace.reward == 10 * -1e-4


def test_reward_arithmetic():
    assert episode_reward(66, True) == 66 * -1e-4 + 1.0
    assert abs(episode_reward(66, True) - 0.9934) < 1e-15


def test_fitness_is_batch_mean():
    p = zero_params(SMALL)
    assert fitness(p.flat, [UNITS], SMALL) == 1.0
    hard = chain(30)
    r_hard = run_episode(hard, p, cap=1000).reward
    assert fitness(p.flat, [UNITS, hard], SMALL) == (1.0 + r_hard) / 2
    assert fitness(p.flat, [hard, hard], SMALL) == fitness(p.flat, [hard], SMALL)
    with pytest.raises(ValueError):
        fitness(p.flat, [], SMALL)


def test_rank_normalize():
    assert rank_normalize([3, 1, 2]).tolist() == [0.5, -0.5, 0.0]
    assert rank_normalize([2.0, 2.0, 2.0]).tolist() == [0.0, 0.0, 0.0]
    rng = np.random.default_rng(0)
    for _ in range(50):
        f = rng.integers(0, 5, size=rng.integers(2, 40)).astype(float)
        w = rank_normalize(f)
        assert abs(w.sum()) < 1e-12
        assert np.array_equal(rank_normalize(f + 123.5), w)


def test_es_update_pair_arithmetic():
    sigma = 0.02
    e1 = np.array([[1.0, 0.0, 0.0], [-1.0, -0.0, -0.0]])
    g = es_update(e1, [0.5, -0.5], sigma)
    assert np.allclose(g, np.array([1.0, 0, 0]) / (2 * sigma))
    assert np.array_equal(es_update(e1, [0.25, 0.25], sigma), np.zeros(3))


def test_es_update_quadratic_sign():
    rng = np.random.default_rng(1)
    theta = rng.standard_normal(10)
    sigma = 0.1
    eps = rng.standard_normal((1000, 10))
    signed = np.empty((2000, 10))
    signed[0::2], signed[1::2] = eps, -eps
    fits = [-np.sum((theta + sigma * e) ** 2) for e in signed]
    g = es_update(signed, rank_normalize(fits), sigma)
    assert g @ theta < 0


def test_es_update_order_independent():
    rng = np.random.default_rng(2)
    eps = rng.standard_normal((16, 30))
    w = rank_normalize(rng.standard_normal(16))
    perm = rng.permutation(16)
    assert np.allclose(es_update(eps, w, 0.02), es_update(eps[perm], w[perm], 0.02), atol=1e-12)


def test_adam_first_step_magnitude():
    theta = np.zeros(5)
    g = np.array([0.05, -2.0, 5.0, 1e2, -7e-2])
    new = adam_step(AdamState.zeros(5), theta, g, lr=0.01)
    assert np.allclose(np.abs(new), 0.01, rtol=1e-6)
    assert np.array_equal(np.sign(new), np.sign(g))


def test_adam_zero_gradient():
    theta = np.array([1.0, -2.0, 3.0])
    state = AdamState.zeros(3)
    assert np.array_equal(adam_step(state, theta, np.zeros(3), lr=0.01), theta)
    assert state.t == 1
    shrunk = adam_step(AdamState.zeros(3), theta, np.zeros(3), lr=0.01, weight_decay=0.005)
    assert np.array_equal(shrunk, theta * (1 - 0.01 * 0.005))


def test_adam_shape_check():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(3), np.zeros(3), np.zeros(4), lr=0.01)


def test_zero_iterations_returns_initial_params():
    es = EsConfig(iterations=0, seed=4)
    res = train([UNITS], es, SMALL)
    assert np.array_equal(res.params.flat, initial_params(SMALL, 4).flat)
    assert res.log == []


def test_identity_rule_fitness_is_one():
    es = EsConfig(iterations=3, n_directions=2, batch_size=2, seed=0)
    res = train(cell_set(204, 4), es, SMALL)
    assert [row["mean_fitness"] for row in res.log] == [1.0, 1.0, 1.0]
    assert all(row["solved_frac"] == 1.0 for row in res.log)


def test_constant_fitness_gives_decay_only_update():
    es = EsConfig(iterations=1, n_directions=3, batch_size=2, seed=0)
    start = initial_params(SMALL, 0)
    res = train(cell_set(204, 3), es, params=start)
    assert np.array_equal(res.params.flat, start.flat * (1 - es.lr * es.weight_decay))


def _hard_set():
    rng = random.Random(0)
    out = []
    for _ in range(6):
        n = 14
        clauses = [[v if rng.random() < 0.5 else -v for v in rng.sample(range(1, n + 1), 3)]
                   for _ in range(40)]
        out.append(CnfFormula.from_clauses(n, clauses))
    return out


def test_training_is_deterministic_across_worker_counts():
    es = EsConfig(sigma=1.0, iterations=2, n_directions=3, batch_size=2, train_step_cap=50, seed=5)
    data = _hard_set()
    a = train(data, es, SMALL)
    b = train(data, es, SMALL)
    c = train(data, es, SMALL, workers=2)
    assert a.log == b.log == c.log
    assert np.array_equal(a.params.flat, b.params.flat)
    assert np.array_equal(a.params.flat, c.params.flat)
    assert any(row["mean_fitness"] != row["max_fitness"] for row in a.log)


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    data = _hard_set()
    full = train(data, EsConfig(sigma=1.0, iterations=4, n_directions=2, batch_size=2, train_step_cap=40, seed=2), SMALL)
    path = tmp_path / "ck.bin"
    head = train(data, EsConfig(sigma=1.0, iterations=2, n_directions=2, batch_size=2, train_step_cap=40, seed=2), SMALL,
                 checkpoint_path=path)
    params, adam = load_checkpoint(path)
    assert adam.t == 2
    assert np.array_equal(params.flat, head.params.flat)
    tail = train(data, EsConfig(sigma=1.0, iterations=4, n_directions=2, batch_size=2, train_step_cap=40, seed=2),
                 params=params, adam=adam)
    assert head.log + tail.log == full.log
    assert np.array_equal(tail.params.flat, full.params.flat)
    assert any(row["mean_fitness"] != row["max_fitness"] for row in full.log)


def test_checkpoint_round_trip(tmp_path):
    p = init_params(SMALL, np.random.default_rng(0))
    state = AdamState(np.arange(len(p), dtype=float), np.ones(len(p)), 7)
    save_checkpoint(tmp_path / "c.bin", p, state)
    q, s = load_checkpoint(tmp_path / "c.bin")
    assert np.array_equal(q.flat, p.flat) and q.config == SMALL
    assert np.array_equal(s.m, state.m) and np.array_equal(s.v, state.v) and s.t == 7


def test_evaluate_batch_traces():
    p = zero_params(SMALL)
    traces = evaluate_batch(p.flat, [UNITS, chain(12)], SMALL, cap=5)
    assert traces[0].solved
    for t in traces:
        assert t.reward == t.decisions * -1e-4 + (1.0 if t.solved else 0.0)
        assert not t.solved or t.decisions <= 5


def test_params_are_read_only():
    p = PolicyParams(np.zeros(35521), PolicyConfig())
    with pytest.raises(ValueError):
        p.flat[0] = 1.0
