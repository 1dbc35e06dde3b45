"""Fixed heuristic measurement schedules. None of them look at the state."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .simulator import ConfigError

FIXED_CHANNELS = {
    "F1_alone": (0,),
    "F2_alone": (1,),
    "F3_alone": (2,),
    "F1_3_all": (0, 1, 2),
    "F1_2_alone": (0, 1),
    "F2_3_alone": (1, 2),
    "never_measure": (),
}
RANDOM_KINDS = ("F1_3_random", "F1_2_random", "F2_3_random")
HEURISTIC_KINDS = (
    "F1_alone",
    "F2_alone",
    "F3_alone",
    "F1_3_random",
    "F1_3_all",
    "F1_2_alone",
    "F2_3_alone",
)
ALL_KINDS = HEURISTIC_KINDS + ("never_measure",)

_RANDOM_POOLS = {"F1_3_random": (0, 1, 2), "F1_2_random": (0, 1), "F2_3_random": (1, 2)}


class HeuristicPolicy:
    """One of the named heuristics.

    The ``*_random`` kinds measure exactly one channel per step, drawn
    uniformly from their pool. ``F1_2_random``/``F2_3_random`` are the
    alternative reading of the pair baselines.
    """

    def __init__(self, kind: str, n_channels: int = 6, seed: int = 0):
        if kind not in FIXED_CHANNELS and kind not in _RANDOM_POOLS:
            raise ConfigError(f"unknown heuristic {kind!r}")
        self.kind = kind
        self.n_channels = n_channels
        self.seed = seed
        self._fixed = None
        if kind in FIXED_CHANNELS:
            self._fixed = np.zeros(n_channels, dtype=np.int8)
            self._fixed[list(FIXED_CHANNELS[kind])] = 1
        self.begin_episode(0)

    @property
    def name(self) -> str:
        return self.kind

    def begin_episode(self, index: int) -> None:
        self._rng = np.random.default_rng([self.seed, index])

    def act(self, state: Optional[np.ndarray] = None) -> np.ndarray:
        if self._fixed is not None:
            return self._fixed.copy()
        bits = np.zeros(self.n_channels, dtype=np.int8)
        bits[self._rng.choice(_RANDOM_POOLS[self.kind])] = 1
        return bits

    def __repr__(self):
        return f"HeuristicPolicy({self.kind!r})"


def make_baselines(n_channels: int = 6, seed: int = 0, include_control: bool = True) -> list[HeuristicPolicy]:
    kinds = ALL_KINDS if include_control else HEURISTIC_KINDS
    return [HeuristicPolicy(k, n_channels, seed) for k in kinds]
