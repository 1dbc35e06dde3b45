import itertools
import math

import numpy as np
import pytest

from measched.agent import (
    Batch,
    DqnConfig,
    DQNAgent,
    DuelingQNetwork,
    FactoredQ,
    ReplayBuffer,
    bellman_targets,
    dueling_aggregate,
    factored_loss_and_grads,
    select_action,
    train,
)
from measched.environment import EnvConfig, MeasurementEnv, rollout
from measched.nn import MLP, layer_specs
from measched.oracle import OracleConfig
from measched.simulator import ConfigError, SimConfig, generate_dataset

K = 6


def constant_qnet(value, adv=(0.0, 0.0), state_dim=30):
    """Network whose output ignores the input: V_k = value, A_k = adv."""
    net = MLP(layer_specs(state_dim, [8], 3 * K), init=False)
    net.biases[-1][:K] = value
    net.biases[-1][K:] = np.tile(adv, K)
    return DuelingQNetwork(state_dim, K, net=net)


def random_batch(rng, n=16, state_dim=30, done_rate=0.2):
    return Batch(
        rng.normal(size=(n, state_dim)),
        rng.integers(0, 2, size=(n, K)).astype(np.int8),
        rng.normal(scale=3.0, size=(n, K)),
        rng.normal(size=(n, state_dim)),
        rng.random(n) < done_rate,
    )


def test_equal_advantages_give_value():
    q = dueling_aggregate(np.array([1.5, -2.0]), np.array([[3.0, 3.0], [-1.0, -1.0]]))
    assert q.q0.tolist() == [1.5, -2.0] and q.q1.tolist() == [1.5, -2.0]


def test_centered_advantages_pass_through():
    q = dueling_aggregate(np.zeros(1), np.array([[2.0, -2.0]]))
    assert q.q0.tolist() == [2.0] and q.q1.tolist() == [-2.0]


def test_advantage_shift_invariance_exact_rational():
    from fractions import Fraction

    rng = np.random.default_rng(0)
    frac = np.vectorize(Fraction, otypes=[object])
    v = frac(rng.normal(size=K))
    a = frac(rng.normal(size=(K, 2)))
    c = frac(rng.normal(size=(K, 1)))
    base, shifted = dueling_aggregate(v, a), dueling_aggregate(v, a + c)
    assert list(base.q0) == list(shifted.q0) and list(base.q1) == list(shifted.q1)


def test_advantage_shift_invariance_bitwise_on_grid():
    # grid values make a + c exact in float64, so outputs must match bit for bit
    rng = np.random.default_rng(1)
    v = rng.integers(-2**20, 2**20, size=(50, K)) / 2**10
    a = rng.integers(-2**20, 2**20, size=(50, K, 2)) / 2**10
    c = rng.integers(-2**20, 2**20, size=(50, K, 1)) / 2**10
    base, shifted = dueling_aggregate(v, a), dueling_aggregate(v, a + c)
    assert np.array_equal(base.q0, shifted.q0) and np.array_equal(base.q1, shifted.q1)


def test_select_action_greedy_and_ties():
    rng = np.random.default_rng(0)
    q = FactoredQ(np.zeros(K), np.ones(K))
    assert select_action(q, 0.0, rng).tolist() == [1] * K
    q = FactoredQ(np.full(K, 0.3), np.full(K, 0.3))
    assert select_action(q, 0.0, rng).tolist() == [0] * K
    with pytest.raises(ValueError):
        select_action(q, 1.5, rng)


def test_select_action_full_exploration_frequencies():
    rng = np.random.default_rng(1)
    q = FactoredQ(np.zeros(K), np.ones(K))
    n = 10_000
    draws = np.array([select_action(q, 1.0, rng) for _ in range(n)])
    sigma = math.sqrt(0.25 / n)
    assert np.all(np.abs(draws.mean(axis=0) - 0.5) <= 3 * sigma)


def test_joint_q_is_sum_and_greedy_is_joint_argmax():
    rng = np.random.default_rng(2)
    for _ in range(20):
        q = FactoredQ(rng.normal(size=K), rng.normal(size=K))
        actions = np.array(list(itertools.product((0, 1), repeat=K)))
        joint = np.array([q.joint(a) for a in actions])
        brute = np.array([sum(q.q1[k] if a[k] else q.q0[k] for k in range(K)) for a in actions])
        assert np.allclose(joint, brute, atol=1e-12)
        assert actions[np.argmax(joint)].tolist() == q.greedy().tolist()


def test_bellman_targets_terminal_and_gamma_zero():
    rng = np.random.default_rng(3)
    target = constant_qnet(5.0)
    b = random_batch(rng)
    b.dones[:] = True
    assert np.array_equal(bellman_targets(b, target, 0.99), b.rewards)
    b.dones[:] = False
    assert np.array_equal(bellman_targets(b, target, 0.0), b.rewards)


def test_bellman_target_arithmetic():
    target = constant_qnet(2.0)
    b = Batch(np.zeros((1, 30)), np.ones((1, K), dtype=np.int8), np.full((1, K), -1.0),
              np.zeros((1, 30)), np.array([False]))
    assert bellman_targets(b, target, 0.99) == pytest.approx(np.full((1, K), 0.98), abs=1e-15)


def test_fixed_point_has_zero_loss_and_gradient():
    gamma = 0.5
    online = constant_qnet(-2.0)  # V = r / (1 - gamma) with r = -1
    rng = np.random.default_rng(4)
    b = random_batch(rng, done_rate=0.0)
    b.rewards[:] = -1.0
    targets = bellman_targets(b, online, gamma)
    loss, grads = factored_loss_and_grads(online, b, targets)
    assert loss == 0.0
    assert all(not g.any() for g in grads)


def loss_at(online, batch, targets):
    q = online.q_values(batch.states)
    err = np.where(batch.actions.astype(bool), q.q1, q.q0) - targets
    return float(np.sum(err**2) / len(err))


def test_loss_gradient_matches_finite_differences():
    from tests.test_nn import max_rel_error, numeric_grads

    rng = np.random.default_rng(5)
    online = DuelingQNetwork(30, K, hidden=(16, 16), seed=7)
    target = DuelingQNetwork(30, K, hidden=(16, 16), seed=8)
    b = random_batch(rng, n=12)
    targets = bellman_targets(b, target, 0.99)
    loss, grads = factored_loss_and_grads(online, b, targets)
    assert loss == pytest.approx(loss_at(online, b, targets), abs=1e-12)
    numeric = numeric_grads(online.net, lambda: loss_at(online, b, targets))
    assert max_rel_error(grads, numeric) < 1e-6


def test_train_step_determinism():
    def run():
        agent = DQNAgent(30, K, DqnConfig(hidden=(16,), seed=3))
        rng = np.random.default_rng(0)
        for i in range(30):
            agent.train_step(random_batch(rng))
            if i % 10 == 0:
                agent.sync_target()
        return agent.online.net.to_dict()

    assert run() == run()


def test_target_network_frozen_between_syncs():
    agent = DQNAgent(30, K, DqnConfig(hidden=(16,), seed=1))
    snap = agent.target.net.to_dict()
    rng = np.random.default_rng(1)
    for _ in range(5):
        agent.train_step(random_batch(rng))
    assert agent.target.net.to_dict() == snap
    assert agent.online.net.to_dict() != snap
    agent.sync_target()
    assert agent.target.net.to_dict() == agent.online.net.to_dict()


def test_replay_ring_and_uniformity():
    buf = ReplayBuffer(10, 2, K, seed=0)
    for i in range(25):
        buf.add(np.full(2, i), np.zeros(K), np.zeros(K), np.zeros(2), False)
    assert len(buf) == 10
    assert sorted(buf.states[:, 0].tolist()) == list(range(15, 25))

    batch = 4
    draws = 20_000
    counts = np.zeros(10)
    for _ in range(draws):
        idx = buf.sample_indices(batch)
        assert len(set(idx.tolist())) == batch
        counts[idx] += 1
    p = batch / 10
    sigma = math.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) <= 3 * sigma)
    with pytest.raises(ValueError):
        ReplayBuffer(3, 2, K).sample_indices(2)


def test_epsilon_schedule():
    cfg = DqnConfig(train_steps=1000)
    assert cfg.epsilon(0) == 1.0
    assert cfg.epsilon(250) == pytest.approx(0.525)
    assert cfg.epsilon(500) == 0.05 and cfg.epsilon(999) == 0.05
    assert DqnConfig(train_steps=0).epsilon(0) == 0.05


@pytest.mark.parametrize("kwargs", [dict(gamma=1.2), dict(eps_end=-0.1), dict(batch_size=10, replay_capacity=5)])
def test_config_checks(kwargs):
    with pytest.raises(ConfigError):
        DqnConfig(**kwargs)


@pytest.fixture(scope="module")
def small_data():
    return generate_dataset(SimConfig(), 30, seed=0)


def test_zero_train_steps_leaves_initialisation(small_data):
    env = MeasurementEnv(OracleConfig(), EnvConfig())
    cfg = DqnConfig(train_steps=0, seed=2)
    agent = DQNAgent(env.state_dim, K, cfg)
    init = agent.online.net.to_dict()
    curve = train(agent, env, small_data)
    assert curve == [] and agent.online.net.to_dict() == init


def test_short_training_is_deterministic(small_data):
    env = MeasurementEnv(OracleConfig(), EnvConfig())
    cfg = DqnConfig(hidden=(16,), train_steps=400, batch_size=16, target_sync=50, log_interval=100, seed=5)

    def run():
        agent = DQNAgent(env.state_dim, K, cfg)
        curve = train(agent, env, small_data)
        return agent.online.net.to_dict(), curve

    (p1, c1), (p2, c2) = run(), run()
    assert p1 == p2
    assert [c.step for c in c1] == [100, 200, 300, 400]
    assert [c.loss for c in c1] == [c.loss for c in c2]


def test_greedy_policy_snapshot_is_frozen(small_data):
    env = MeasurementEnv(OracleConfig(), EnvConfig())
    agent = DQNAgent(env.state_dim, K, DqnConfig(hidden=(16,), seed=0))
    pol = agent.policy()
    before = [pol.act(np.full(30, x)).tolist() for x in (-1.0, 0.0, 1.0)]
    agent.train_step(random_batch(np.random.default_rng(0)))
    assert [pol.act(np.full(30, x)).tolist() for x in (-1.0, 0.0, 1.0)] == before
