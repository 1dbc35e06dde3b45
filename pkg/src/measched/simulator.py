"""Two-state Markov patient simulator.

Hidden status is 0 (healthy) or 1 (critical). Channels 1-3 carry the status
(+1 / -1 plus unit Gaussian noise), the remaining channels are noise; channel 5
additionally carries a fair coin ``c_t``. A run of ``terminal_run`` consecutive
critical steps is a terminal event and ends the trajectory.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

N_INFORMATIVE = 3
BERNOULLI_CHANNEL = 4  # 0-based index of the c_t + eps channel


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    p_h2c: float = 0.1
    p_c2h: float = 0.3
    terminal_run: int = 5
    horizon: int = 5
    n_channels: int = 6
    len_min: int = 20
    len_max: int = 40
    missing_rate: float = 0.2
    bernoulli_p: float = 0.5
    noise_enabled: bool = True
    initial_state: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_h2c", "p_c2h", "missing_rate", "bernoulli_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.terminal_run < 1:
            raise ConfigError("terminal_run must be >= 1")
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if self.n_channels < 4:
            raise ConfigError("n_channels must be >= 4")
        if not 1 <= self.len_min <= self.len_max:
            raise ConfigError("need 1 <= len_min <= len_max")
        if self.initial_state not in (0, 1):
            raise ConfigError("initial_state must be 0 or 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trajectory:
    states: np.ndarray  # (T,) int8
    values: np.ndarray  # (T, K) float64, 0 where mask == 0
    mask: np.ndarray  # (T, K) int8
    labels: np.ndarray  # (T,) int8
    terminal_step: Optional[int] = None

    @property
    def length(self) -> int:
        return len(self.states)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.terminal_step == other.terminal_step
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.labels, other.labels)
        )


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent Philox substream for trajectory ``index`` of dataset ``seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def simulate_states(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    max_len = int(rng.integers(cfg.len_min, cfg.len_max + 1))
    states = np.zeros(max_len, dtype=np.int8)
    s = cfg.initial_state
    run = 0
    for t in range(max_len):
        if t > 0:
            u = rng.random()
            if s == 0:
                s = 1 if u < cfg.p_h2c else 0
            else:
                s = 0 if u < cfg.p_c2h else 1
        states[t] = s
        run = run + 1 if s == 1 else 0
        if run == cfg.terminal_run:
            return states[: t + 1]
    return states


def emit_measurements(
    states: np.ndarray,
    cfg: SimConfig,
    rng: np.random.Generator,
    coins: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(values, mask)`` for a state sequence.

    ``coins`` overrides the Bernoulli draws for the c_t channel (test hook).
    """
    states = np.asarray(states)
    if states.ndim != 1 or len(states) == 0:
        raise ValueError("states must be a nonempty 1-d sequence")
    T, K = len(states), cfg.n_channels
    eps = rng.standard_normal((T, K))
    drawn = (rng.random(T) < cfg.bernoulli_p).astype(np.float64)
    c = drawn if coins is None else np.asarray(coins, dtype=np.float64)
    if not cfg.noise_enabled:
        eps = np.zeros_like(eps)

    values = eps.copy()
    signal = np.where(states == 1, 1.0, -1.0)
    values[:, :N_INFORMATIVE] += signal[:, None]
    if K > BERNOULLI_CHANNEL:
        values[:, BERNOULLI_CHANNEL] += c

    keep = rng.random((T, K)) >= cfg.missing_rate
    mask = keep.astype(np.int8)
    values = np.where(keep, values, 0.0)
    return values, mask


def find_terminal_step(states, terminal_run: int) -> Optional[int]:
    run = 0
    for t, s in enumerate(states):
        run = run + 1 if s == 1 else 0
        if run == terminal_run:
            return t
    return None


def label_events(states, cfg: SimConfig) -> tuple[np.ndarray, Optional[int]]:
    terminal = find_terminal_step(states, cfg.terminal_run)
    labels = np.zeros(len(states), dtype=np.int8)
    if terminal is not None:
        lo = max(0, terminal - cfg.horizon)
        labels[lo : terminal + 1] = 1
    return labels, terminal


def simulate_trajectory(cfg: SimConfig, rng: np.random.Generator) -> Trajectory:
    states = simulate_states(cfg, rng)
    values, mask = emit_measurements(states, cfg, rng)
    labels, terminal = label_events(states, cfg)
    return Trajectory(states, values, mask, labels, terminal)


def generate_dataset(cfg: SimConfig, n: int, seed: Optional[int] = None) -> list[Trajectory]:
    """``n`` trajectories, each a pure function of ``(cfg, seed, index)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seed = cfg.seed if seed is None else seed
    return [simulate_trajectory(cfg, trajectory_rng(seed, i)) for i in range(n)]


@dataclass
class DatasetSummary:
    n: int
    mean_length: float
    event_rate: float
    missing_fraction: float
    critical_fraction: float = field(default=0.0)


def summarize(dataset: list[Trajectory]) -> DatasetSummary:
    lengths = np.array([tr.length for tr in dataset])
    events = np.array([tr.terminal_step is not None for tr in dataset])
    masks = np.concatenate([tr.mask.ravel() for tr in dataset])
    states = np.concatenate([tr.states for tr in dataset])
    return DatasetSummary(
        n=len(dataset),
        mean_length=float(lengths.mean()),
        event_rate=float(events.mean()),
        missing_fraction=float(1.0 - masks.mean()),
        critical_fraction=float(states.mean()),
    )
