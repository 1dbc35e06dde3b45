import math

import numpy as np
import pytest

from measched.baselines import HeuristicPolicy
from measched.environment import (
    EnvConfig,
    MeasurementEnv,
    TransitionRecord,
    UsageError,
    inverse_frequency_cost,
    read_transitions,
    rollout,
    write_transitions,
)
from measched.oracle import OracleConfig
from measched.simulator import SimConfig, Trajectory, generate_dataset


def make_traj(states, values=None, mask=None, labels=None, terminal=None):
    states = np.asarray(states, dtype=np.int8)
    T = len(states)
    values = np.zeros((T, 6)) if values is None else np.asarray(values, dtype=np.float64)
    mask = np.ones((T, 6), dtype=np.int8) if mask is None else np.asarray(mask, dtype=np.int8)
    labels = np.zeros(T, dtype=np.int8) if labels is None else np.asarray(labels, dtype=np.int8)
    return Trajectory(states, values, mask, labels, terminal)


class Fixed:
    def __init__(self, bits):
        self.bits = np.asarray(bits, dtype=np.int8)

    def act(self, state):
        return self.bits


@pytest.fixture
def env():
    return MeasurementEnv(OracleConfig(), EnvConfig())


@pytest.fixture(scope="module")
def data():
    return generate_dataset(SimConfig(), 40, seed=21)


def test_reset_gives_zero_window(env, data):
    s1 = env.reset(data[0])
    assert s1.shape == (30,) and not s1.any()
    assert np.array_equal(env.reset(data[0]), s1)


def test_length_one_trajectory(env):
    env.reset(make_traj([0]))
    _, _, done, _ = env.step(np.zeros(6))
    assert done
    with pytest.raises(UsageError):
        env.step(np.zeros(6))


def test_all_zero_action(env, data):
    env.reset(data[3])
    for _ in range(3):
        s, r, done, _ = env.step(np.zeros(6))
        assert not r.any() and not s.any()


def test_negative_label_costs_one(env):
    env.reset(make_traj([0, 0], values=np.ones((2, 6))))
    _, r, _, _ = env.step([0, 0, 1, 0, 0, 0])
    assert r.tolist() == [0, 0, -1, 0, 0, 0]


def test_positive_label_reward_channel_3(env):
    values = np.zeros((3, 6))
    values[0, 2] = 1.0
    tr = make_traj([1, 1, 1], values=values, labels=[1, 1, 1])
    env.reset(tr)
    _, r, _, _ = env.step([0, 0, 1, 0, 0, 0])
    expected = 105 * (1 / (1 + math.exp(-4)) - 0.5) - 1
    assert r[2] == pytest.approx(expected, abs=1e-12)
    assert r[2] == pytest.approx(49.61, abs=0.01)


def test_missing_value_still_costs(env):
    values = np.zeros((2, 6))
    mask = np.ones((2, 6))
    mask[0, 2] = 0
    env.reset(make_traj([1, 1], values=values, mask=mask, labels=[1, 1]))
    s, r, _, _ = env.step([0, 0, 1, 0, 0, 0])
    assert r[2] == -1.0
    assert not s.any()


def test_window_only_holds_requested_values(env, data):
    rng = np.random.default_rng(0)
    for tr in data[:10]:
        env.reset(tr)
        requested = []
        done = False
        while not done:
            bits = rng.integers(0, 2, 6)
            t = env.t
            s, _, done, _ = env.step(bits)
            requested.append(np.where(bits == 1, tr.values[t], 0.0))
            w = s.reshape(5, 6)
            expect = np.zeros((5, 6))
            recent = requested[-5:]
            expect[5 - len(recent) :] = recent
            assert np.array_equal(w, expect)


def test_rollout_never_measure_is_zero(env, data):
    for tr in data[:10]:
        _, total = rollout(env, HeuristicPolicy("never_measure"), tr)
        assert total == 0.0


def test_rollout_all_informative_label_free():
    cfg = SimConfig(p_h2c=0.0, len_min=30, len_max=30)
    tr = generate_dataset(cfg, 1, seed=0)[0]
    assert tr.length == 30 and not tr.labels.any()
    env = MeasurementEnv(OracleConfig(), EnvConfig())
    records, total = rollout(env, HeuristicPolicy("F1_3_all"), tr)
    assert total == -90.0
    assert len(records) == 30 and records[-1].done


def test_rollout_deterministic(env, data):
    a, ta = rollout(env, HeuristicPolicy("F1_3_random", seed=4), data[5])
    b, tb = rollout(env, HeuristicPolicy("F1_3_random", seed=4), data[5])
    assert ta == tb
    for x, y in zip(a, b):
        assert np.array_equal(x.state, y.state) and np.array_equal(x.action, y.action)
        assert np.array_equal(x.rewards, y.rewards)


def test_reward_decomposition_and_hygiene(env, data):
    rng = np.random.default_rng(3)
    for tr in data:
        bits = rng.integers(0, 2, 6)
        records, total = rollout(env, Fixed(bits), tr)
        assert total == pytest.approx(sum(r.rewards.sum() for r in records), abs=1e-9)
        for rec in records:
            assert (rec.rewards[rec.action == 0] == 0).all()


def test_cost_accounting_lambda_zero(data):
    cost = (0.5, 1.0, 2.0, 0.25, 3.0, 1.5)
    env = MeasurementEnv(OracleConfig(), EnvConfig(lam=0.0, cost=cost))
    rng = np.random.default_rng(8)
    for tr in data:
        bits = rng.integers(0, 2, 6)
        _, total = rollout(env, Fixed(bits), tr)
        assert total == pytest.approx(-tr.length * float(np.dot(cost, bits)), abs=1e-9)


def test_mask_flag_extends_state(data):
    env = MeasurementEnv(OracleConfig(), EnvConfig(include_mask=True))
    assert env.state_dim == 60
    env.reset(data[0])
    s, _, _, _ = env.step([1, 1, 1, 1, 1, 1])
    assert s[30:].reshape(5, 6)[-1].tolist() == data[0].mask[0].astype(float).tolist()


def test_transition_jsonl_round_trip(tmp_path, env, data):
    records, _ = rollout(env, HeuristicPolicy("F1_3_all"), data[0])
    path = tmp_path / "t.jsonl"
    write_transitions(records, path)
    back = read_transitions(path)
    assert len(back) == len(records)
    for a, b in zip(records, back):
        assert np.array_equal(a.state, b.state) and np.array_equal(a.rewards, b.rewards)
        assert np.array_equal(a.action, b.action) and a.done == b.done


def test_inverse_frequency_cost():
    c = inverse_frequency_cost([0.5, 0.25, 0.25])
    assert c[1] == pytest.approx(2 * c[0])
    assert np.mean(c) == pytest.approx(1.0)


def test_config_checks():
    from measched.simulator import ConfigError

    with pytest.raises(ConfigError):
        EnvConfig(lam=-1)
    with pytest.raises(ConfigError):
        EnvConfig(cost=(1, -1, 1, 1, 1, 1))
    with pytest.raises(ConfigError):
        MeasurementEnv(OracleConfig(), EnvConfig(cost=(1, 1)))
