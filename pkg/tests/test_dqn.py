import math

import numpy as np
import pytest
from sklearn.base import clone

from dqndesign import DivergenceError, EnvParams, EnvState, oracle
from dqndesign.dqn import (DeepQDesigner, Experience, PolicyArtifact, ReplayBuffer,
                           TrainingConfig, default_reward_scale, greedy_decision, td_target, train)
from dqndesign.nn import QNetwork

SHORT = TrainingConfig(episodes=400, min_fill=64, batch_size=32, sync_period=50,
                       eps_decay=0.99, hidden_layers=(16, 16), seed=3)


def exp(tag, terminal=False, reward=0.0):
    s = EnvState(1, 0.1, 1.0, 0)
    return Experience(s, tag, reward, EnvState(2, 0.1, 1.0, 0), terminal)


def test_buffer_fifo_eviction():
    buf = ReplayBuffer(2)
    for tag in (0, 1, 2):
        buf.push(exp(tag))
    assert [e.decision for e in buf.contents()] == [1, 2]


def test_buffer_sizes():
    buf = ReplayBuffer(1000)
    assert len(buf.push(exp(0))) == 1
    for _ in range(10_000):
        buf.push(exp(0))
    assert len(buf) == 1000


def test_buffer_sampling():
    rng = np.random.default_rng(0)
    one = ReplayBuffer(5).push(exp(7))
    assert [e.decision for e in one.sample_minibatch(1, rng)] == [7]
    assert one.sample_minibatch(0, rng) == []
    with pytest.raises(BufferError):
        one.sample_minibatch(2, rng)


def test_buffer_uniform_sampling():
    buf = ReplayBuffer(10)
    for j in range(25):
        buf.push(exp(j, reward=float(j)))
    rng = np.random.default_rng(1)
    draws = np.concatenate([buf.sample_arrays(1, rng)[2] for _ in range(100_000)])
    freq = np.array([np.mean(draws == j) for j in range(15, 25)])
    assert np.all(np.abs(freq - 0.1) < 0.01)


def test_td_target_examples():
    net = QNetwork([4, 3], weights=[np.zeros((4, 3))], biases=[[1.0, 9.0, 4.0]])
    assert td_target(exp(0, terminal=True, reward=5.0), net, 1.0, [0, 1, 2]) == 5.0
    assert td_target(exp(0, reward=5.0), net, 0.0, [0, 1, 2]) == 5.0
    assert td_target(exp(0, reward=2.0), net, 0.5, [0, 1]) == 2.0 + 0.5 * 9.0
    assert td_target(exp(0, reward=2.0), net, 0.5, [0, 2]) == 2.0 + 0.5 * 4.0
    assert td_target(exp(0, reward=2.0), net, 0.5, [0]) == 2.0 + 0.5 * 1.0


def test_td_target_with_exact_network_matches_dp():
    """A network holding the true stage-2 Q-values reproduces the DP continuation."""
    params = EnvParams(horizon=2)
    scale = default_reward_scale(params)
    disc = 1.0 + params.interest
    W = np.zeros((4, 2))
    W[1, 1] = params.unit_output * params.initial_price / disc / scale
    b = np.array([0.0, -(params.op_cost + params.inv_cost) / disc / scale])
    net = QNetwork([4, 2], weights=[W], biases=[b])

    rng = np.random.default_rng(2)
    p2 = params.initial_price * np.exp(params.price_drift + params.price_vol * rng.standard_normal(100_000))
    s1 = EnvState(1, params.initial_price, math.inf, 0)
    ys = np.array([td_target(Experience(s1, 0, 0.0, EnvState(2, p, math.inf, 0), False),
                             net, 1.0, [0, 1], params, scale) for p in p2]) * scale
    sol = oracle.backward_induction(oracle.build_lattice(params))
    assert abs(ys.mean() - sol.value) < 3 * ys.std(ddof=1) / math.sqrt(ys.size)


def test_single_episode_smoke(tmp_path):
    cfg = TrainingConfig(episodes=1, eps_start=1.0, eps_end=1.0, hidden_layers=(8,))
    artifact, log = train(EnvParams(), cfg)
    assert len(log.rows) == 1 and log.gradient_steps == 0
    loaded = PolicyArtifact.load(artifact.save(tmp_path / "a.json"))
    assert greedy_decision(loaded, EnvState(2, 0.2, math.inf, 0)) in (0, 1)


def test_greedy_decision_masking_and_hand_set_network():
    params = EnvParams(horizon=2, max_capacity=2)
    favour_one = QNetwork([4, 3], weights=[np.zeros((4, 3))], biases=[[0.0, 5.0, 1.0]])
    art = PolicyArtifact(favour_one, params, TrainingConfig(), 1.0)
    s = EnvState(2, 0.1, math.inf, 0)
    assert greedy_decision(art, s) == 1
    assert greedy_decision(art, s) == greedy_decision(art, s)
    favour_two = QNetwork([4, 3], weights=[np.zeros((4, 3))], biases=[[0.0, 1.0, 50.0]])
    art = PolicyArtifact(favour_two, params, TrainingConfig(), 1.0)
    assert greedy_decision(art, EnvState(2, 0.1, math.inf, 2)) == 0
    assert greedy_decision(art, EnvState(2, 0.1, math.inf, 1)) == 1


def test_short_training_reproducible_and_within_budget():
    params = EnvParams(horizon=3, max_capacity=2, demand_enabled=True)
    a, log_a = train(params, SHORT)
    b, log_b = train(params, SHORT)
    assert log_a.to_csv("d") == log_b.to_csv("d")
    assert np.array_equal(a.network.params, b.network.params)
    assert log_a.transitions == SHORT.episodes * params.horizon
    assert log_a.budget_violations == 0
    assert log_a.gradient_steps > 0


def test_checkpoint_round_trip_probe(tmp_path):
    params = EnvParams(horizon=3, max_capacity=2, demand_enabled=True)
    art, _ = train(params, SHORT)
    loaded = PolicyArtifact.load(art.save(tmp_path / "ckpt.json"))
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.integers(1, 4, 1000), rng.uniform(0.05, 0.2, 1000),
                         rng.uniform(0.5, 2.0, 1000), rng.integers(0, 3, 1000)])
    assert np.array_equal(loaded.predict(X), art.predict(X))
    assert np.array_equal(loaded.q_values(X), art.q_values(X))


def test_decisions_depend_on_state_only():
    params = EnvParams(horizon=3)
    art, _ = train(params, SHORT)
    rng = np.random.default_rng(4)
    X = np.column_stack([rng.integers(1, 4, 200), rng.uniform(0.05, 0.2, 200),
                         np.full(200, np.inf), rng.integers(0, 2, 200)])
    single = [greedy_decision(art, EnvState(int(t), p, d, int(k))) for t, p, d, k in X]
    assert art.predict(X).tolist() == single
    assert art.predict(X[::-1]).tolist() == single[::-1]


def test_corrupt_checkpoint(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError):
        PolicyArtifact.load(bad)
    bad.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        PolicyArtifact.load(bad)


def test_divergence_guard_dumps_checkpoint(tmp_path):
    cfg = TrainingConfig(episodes=200, min_fill=32, batch_size=32, reward_scale=1e-13,
                         hidden_layers=(8,))
    with pytest.raises(DivergenceError) as exc:
        train(EnvParams(), cfg, checkpoint_dir=tmp_path)
    assert exc.value.checkpoint_path is not None
    assert PolicyArtifact.load(exc.value.checkpoint_path).params == EnvParams()


def test_estimator_api():
    est = DeepQDesigner(episodes=50, hidden_layers=(8,), min_fill=16, batch_size=16)
    assert clone(est).get_params() == est.get_params()
    est.set_params(random_state=5)
    fitted = est.fit(EnvParams())
    X = np.array([[1, 0.1, np.inf, 0], [2, 0.3, np.inf, 1]])
    assert fitted.predict(X).shape == (2,)
    assert fitted.predict(X)[1] == 0
    assert fitted.decision_function(X).shape == (2, 2)


@pytest.mark.slow
def test_moving_average_trend_non_negative(price_t2_run):
    ma = price_t2_run["log"].moving_average()[-50_000:]
    slope = np.polyfit(np.arange(ma.size), ma, 1)[0]
    assert slope >= 0
