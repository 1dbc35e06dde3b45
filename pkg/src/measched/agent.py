"""Factored dueling DQN for multi-hot measurement actions.

The joint action value is assumed additive over channels, so the network only
emits, per channel ``k``, a value ``V_k`` and an advantage pair
``(A_k(0), A_k(1))``. Training minimises the sum over channels of the
per-channel squared Bellman errors.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .environment import MeasurementEnv, TransitionRecord
from .nn import MLP, Adam, TrainingError, layer_specs, optimizer_step
from .simulator import ConfigError, Trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DqnConfig:
    hidden: tuple = (64, 64)
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5
    replay_capacity: int = 100_000
    batch_size: int = 64
    target_sync: int = 1000
    train_steps: int = 200_000
    lr: float = 1e-4
    seed: int = 0
    log_interval: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        for name in ("eps_start", "eps_end", "eps_decay_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ConfigError("need 1 <= batch_size <= replay_capacity")
        if self.target_sync < 1 or self.train_steps < 0 or self.log_interval < 1:
            raise ConfigError("target_sync, log_interval must be >= 1 and train_steps >= 0")

    def epsilon(self, step: int) -> float:
        """Linear decay over the first ``eps_decay_frac`` of training, then flat."""
        decay = self.eps_decay_frac * self.train_steps
        if decay <= 0 or step >= decay:
            return self.eps_end
        return self.eps_start + (step / decay) * (self.eps_end - self.eps_start)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FactoredQ:
    q0: np.ndarray  # (..., K)
    q1: np.ndarray

    def joint(self, bits) -> np.ndarray:
        """Q of a multi-hot action: the sum of the chosen per-channel values."""
        bits = np.asarray(bits).astype(bool)
        return np.where(bits, self.q1, self.q0).sum(axis=-1)

    def greedy(self) -> np.ndarray:
        return (self.q1 > self.q0).astype(np.int8)


def dueling_aggregate(value, advantage) -> FactoredQ:
    """``Q_k(a) = V_k + A_k(a) - (A_k(0) + A_k(1)) / 2``.

    ``value`` has shape (..., K), ``advantage`` (..., K, 2). Object arrays
    (e.g. of ``Fraction``) are kept as-is for exact arithmetic.
    """
    value, advantage = np.asarray(value), np.asarray(advantage)
    if value.dtype != object:
        value = value.astype(np.float64)
    if advantage.dtype != object:
        advantage = advantage.astype(np.float64)
    half = (advantage[..., 0] - advantage[..., 1]) / 2
    return FactoredQ(value + half, value - half)


def select_action(q: FactoredQ, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Per-channel epsilon-greedy; greedy ties go to 0 (don't measure)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    greedy = q.greedy()
    K = greedy.shape[-1]
    explore = rng.random(K) < epsilon
    coin = rng.integers(0, 2, size=K).astype(np.int8)
    return np.where(explore, coin, greedy).astype(np.int8)


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions."""

    def __init__(self, capacity: int, state_dim: int, n_channels: int, seed: int = 0):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, n_channels), dtype=np.int8)
        self.rewards = np.zeros((capacity, n_channels))
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.pos = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def add(self, state, action, rewards, next_state, done) -> None:
        i = self.pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = rewards
        self.next_states[i] = next_state
        self.dones[i] = done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_record(self, rec: TransitionRecord) -> None:
        self.add(rec.state, rec.action, rec.rewards, rec.next_state, rec.done)

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if batch_size > self.size:
            raise ValueError(f"cannot sample {batch_size} from {self.size} stored transitions")
        return self.rng.choice(self.size, size=batch_size, replace=False)

    def sample(self, batch_size: int) -> "Batch":
        idx = self.sample_indices(batch_size)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx])


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence[TransitionRecord]) -> "Batch":
        return cls(
            np.stack([r.state for r in records]),
            np.stack([r.action for r in records]).astype(np.int8),
            np.stack([r.rewards for r in records]),
            np.stack([r.next_state for r in records]),
            np.array([r.done for r in records], dtype=bool),
        )


class DuelingQNetwork:
    """MLP trunk whose last linear layer is read as K values then K advantage pairs."""

    def __init__(self, state_dim: int, n_channels: int, hidden=(64, 64), seed: int = 0,
                 net: Optional[MLP] = None):
        self.K = n_channels
        self.net = net if net is not None else MLP(layer_specs(state_dim, hidden, 3 * n_channels), seed=seed)
        if self.net.out_dim != 3 * n_channels:
            raise ConfigError("network output must be 3K wide")

    def split(self, out: np.ndarray):
        K = self.K
        return out[..., :K], out[..., K:].reshape(out.shape[:-1] + (K, 2))

    def q_values(self, states) -> FactoredQ:
        return dueling_aggregate(*self.split(self.net(states)))

    def copy(self) -> "DuelingQNetwork":
        return DuelingQNetwork(self.net.in_dim, self.K, net=self.net.copy())


def bellman_targets(batch: Batch, target: DuelingQNetwork, gamma: float) -> np.ndarray:
    """Per-channel targets ``r_k + gamma * max_a Qbar_k(s', a)``; terminal rows get ``r_k``."""
    q_next = target.q_values(batch.next_states)
    best = np.maximum(q_next.q0, q_next.q1)
    live = (~np.asarray(batch.dones, dtype=bool)).astype(np.float64)[:, None]
    return batch.rewards + gamma * live * best


def factored_loss_and_grads(online: DuelingQNetwork, batch: Batch, targets: np.ndarray):
    """Batch-mean of the summed per-channel squared errors, and its parameter gradients."""
    out, cache = online.net.forward(batch.states)
    q = dueling_aggregate(*online.split(out))
    taken = batch.actions.astype(bool)
    err = np.where(taken, q.q1, q.q0) - targets
    B = len(err)
    loss = float(np.sum(err**2) / B)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss (max |err| = {np.nanmax(np.abs(err))})")
    d = 2.0 * err / B
    d_q1 = np.where(taken, d, 0.0)
    d_q0 = d - d_q1
    # Q0 = V + (A0 - A1)/2, Q1 = V - (A0 - A1)/2
    d_half = (d_q0 - d_q1) / 2
    K = online.K
    d_out = np.empty_like(out)
    d_out[:, :K] = d_q0 + d_q1
    d_adv = d_out[:, K:].reshape(B, K, 2)
    d_adv[..., 0] = d_half
    d_adv[..., 1] = -d_half
    return loss, online.net.backward(cache, d_out)


@dataclass
class CurvePoint:
    step: int
    loss: float
    epsilon: float
    mean_return: float


class DQNAgent:
    def __init__(self, state_dim: int, n_channels: int, cfg: DqnConfig = DqnConfig()):
        self.cfg = cfg
        self.state_dim = state_dim
        self.K = n_channels
        self.online = DuelingQNetwork(state_dim, n_channels, cfg.hidden, seed=cfg.seed)
        self.target = self.online.copy()
        self.opt = Adam(self.online.net.params(), lr=cfg.lr)
        self.updates = 0

    def q_values(self, states) -> FactoredQ:
        return self.online.q_values(states)

    def act(self, state) -> np.ndarray:
        return self.q_values(state).greedy()

    def sync_target(self) -> None:
        self.target = self.online.copy()

    def train_step(self, batch: Batch) -> float:
        targets = bellman_targets(batch, self.target, self.cfg.gamma)
        loss, grads = factored_loss_and_grads(self.online, batch, targets)
        optimizer_step(self.online.net, grads, self.opt)
        self.updates += 1
        return loss

    def policy(self) -> "GreedyPolicy":
        return GreedyPolicy(self.online.copy())


class GreedyPolicy:
    """Frozen greedy snapshot of an agent's online network."""

    name = "DQN"

    def __init__(self, qnet: DuelingQNetwork, name: str = "DQN"):
        self.qnet = qnet
        self.name = name

    def act(self, state) -> np.ndarray:
        return self.qnet.q_values(state).greedy()

    def begin_episode(self, index: int) -> None:
        pass


def train(
    agent: DQNAgent,
    env: MeasurementEnv,
    dataset: Sequence[Trajectory],
    progress=None,
) -> list[CurvePoint]:
    """Online epsilon-greedy training over ``dataset`` for ``cfg.train_steps`` env steps.

    Episodes are visited in a freshly shuffled order each epoch. One gradient
    step per environment step once the buffer holds a full batch.
    """
    cfg = agent.cfg
    if not dataset:
        raise ValueError("dataset is empty")
    if env.state_dim != agent.state_dim or env.K != agent.K:
        raise ConfigError("environment and agent dimensions differ")
    shuffle_ss, act_ss, replay_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    act_rng = np.random.default_rng(act_ss)
    buffer = ReplayBuffer(cfg.replay_capacity, agent.state_dim, agent.K, seed=replay_ss)

    curve: list[CurvePoint] = []
    returns: list[float] = []
    losses: list[float] = []
    step = 0
    while step < cfg.train_steps:
        for idx in shuffle_rng.permutation(len(dataset)):
            if step >= cfg.train_steps:
                break
            state = env.reset(dataset[idx])
            done, ep_return = False, 0.0
            while not done and step < cfg.train_steps:
                eps = cfg.epsilon(step)
                action = select_action(agent.q_values(state), eps, act_rng)
                next_state, rewards, done, _ = env.step(action)
                buffer.add(state, action, rewards, next_state, done)
                ep_return += float(rewards.sum())
                state = next_state
                if len(buffer) >= cfg.batch_size:
                    losses.append(agent.train_step(buffer.sample(cfg.batch_size)))
                step += 1
                if step % cfg.target_sync == 0:
                    agent.sync_target()
                if step % cfg.log_interval == 0:
                    recent = returns[-100:]
                    curve.append(CurvePoint(
                        step,
                        float(np.mean(losses)) if losses else float("nan"),
                        eps,
                        float(np.mean(recent)) if recent else float("nan"),
                    ))
                    losses = []
                    if progress is not None:
                        progress(curve[-1])
            if done:
                returns.append(ep_return)
    return curve
