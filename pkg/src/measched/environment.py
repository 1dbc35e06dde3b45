"""Sequential measurement-scheduling environment.

Step ``t`` asks which channels of row ``t`` of the trajectory to observe. The
agent sees only a sliding window of what it has requested; each requested
channel ``k`` earns ``lambda * gain_k * label[t] - cost[k]``, unrequested
channels earn exactly 0.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Protocol

import numpy as np

from . import oracle
from .oracle import OracleConfig
from .simulator import ConfigError, Trajectory


class UsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    lam: float = 105.0
    gamma: float = 0.99
    cost: Optional[tuple] = None  # None -> uniform 1.0 per channel
    include_mask: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.cost is not None:
            object.__setattr__(self, "cost", tuple(float(c) for c in self.cost))
            if any(c < 0 for c in self.cost):
                raise ConfigError("cost entries must be >= 0")

    def cost_vector(self, k: int) -> np.ndarray:
        if self.cost is None:
            return np.ones(k)
        if len(self.cost) != k:
            raise ConfigError(f"cost has {len(self.cost)} entries, expected {k}")
        return np.asarray(self.cost, dtype=np.float64)


def inverse_frequency_cost(frequencies, scale: float = 1.0, floor: float = 1e-3) -> tuple:
    """Costs inversely proportional to how often each channel is measured.

    Normalised so the mean cost equals ``scale``.
    """
    f = np.maximum(np.asarray(frequencies, dtype=np.float64), floor)
    inv = 1.0 / f
    return tuple(float(c) for c in scale * inv / inv.mean())


@dataclass
class TransitionRecord:
    state: np.ndarray
    action: np.ndarray
    rewards: np.ndarray
    next_state: np.ndarray
    done: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "state": self.state.tolist(),
                "action": [int(b) for b in self.action],
                "rewards": self.rewards.tolist(),
                "next_state": self.next_state.tolist(),
                "done": bool(self.done),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "TransitionRecord":
        d = json.loads(line)
        return cls(
            np.asarray(d["state"], dtype=np.float64),
            np.asarray(d["action"], dtype=np.int8),
            np.asarray(d["rewards"], dtype=np.float64),
            np.asarray(d["next_state"], dtype=np.float64),
            bool(d["done"]),
        )


def write_transitions(records: Iterable[TransitionRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_transitions(path) -> list[TransitionRecord]:
    with open(path) as fh:
        return [TransitionRecord.from_json(line) for line in fh if line.strip()]


@dataclass
class StepInfo:
    t: int
    hidden_state: int
    label: int
    probability: float


class Policy(Protocol):
    def act(self, state: np.ndarray) -> np.ndarray: ...


class MeasurementEnv:
    def __init__(self, oracle_cfg: OracleConfig = OracleConfig(), env_cfg: EnvConfig = EnvConfig()):
        self.oracle_cfg = oracle_cfg
        self.cfg = env_cfg
        self.K = oracle_cfg.n_channels
        self.cost = env_cfg.cost_vector(self.K)
        self.trajectory: Optional[Trajectory] = None
        self.t = 0
        self.done = True

    @property
    def state_dim(self) -> int:
        n = self.oracle_cfg.window_len * self.K
        return 2 * n if self.cfg.include_mask else n

    def observation(self) -> np.ndarray:
        obs = self.window.ravel()
        if self.cfg.include_mask:
            obs = np.concatenate([obs, self.window_mask.ravel()])
        return obs.copy()

    def reset(self, trajectory: Trajectory) -> np.ndarray:
        if trajectory.n_channels != self.K:
            raise ConfigError(
                f"trajectory has {trajectory.n_channels} channels, oracle expects {self.K}"
            )
        self.trajectory = trajectory
        self.window = np.zeros((self.oracle_cfg.window_len, self.K))
        self.window_mask = np.zeros_like(self.window)
        self.t = 0
        self.done = False
        return self.observation()

    def step(self, action) -> tuple[np.ndarray, np.ndarray, bool, StepInfo]:
        if self.done:
            raise UsageError("step() called on a finished episode; call reset()")
        bits = np.asarray(action).astype(bool)
        if bits.shape != (self.K,):
            raise ConfigError(f"action must have shape ({self.K},)")
        tr, t = self.trajectory, self.t
        row = tr.values[t]
        gains = oracle.predictive_gains(self.window, row, self.oracle_cfg)
        rewards = np.where(bits, self.cfg.lam * gains * tr.labels[t] - self.cost, 0.0)

        self.window = oracle.shift_in(self.window, np.where(bits, row, 0.0))
        self.window_mask = oracle.shift_in(self.window_mask, (bits & (tr.mask[t] == 1)).astype(np.float64))
        self.t += 1
        self.done = self.t >= tr.length
        info = StepInfo(
            t=t,
            hidden_state=int(tr.states[t]),
            label=int(tr.labels[t]),
            probability=float(oracle.predict(self.window, self.oracle_cfg)),
        )
        return self.observation(), rewards, self.done, info


def rollout(
    env: MeasurementEnv,
    policy,
    trajectory: Trajectory,
    on_step: Optional[Callable] = None,
) -> tuple[list[TransitionRecord], float]:
    """Run ``policy`` to the end of ``trajectory``.

    Returns the transition records and the undiscounted accumulated reward.
    """
    state = env.reset(trajectory)
    records = []
    total = 0.0
    done = False
    while not done:
        action = np.asarray(policy.act(state), dtype=np.int8)
        next_state, rewards, done, info = env.step(action)
        records.append(TransitionRecord(state, action, rewards, next_state, done))
        if on_step is not None:
            on_step(info, action, rewards)
        total += float(rewards.sum())
        state = next_state
    return records, total
