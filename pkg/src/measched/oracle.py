"""Fixed logistic forecaster over a window of recent measurements.

The event probability is ``sigmoid(sum_t sum_k window[t, k] * importance[k])``.
It defines the reward signal; nothing here is learned.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simulator import ConfigError

DEFAULT_IMPORTANCE = (1.0, 2.0, 4.0, 0.0, 0.0, 0.0)
LITERAL_IMPORTANCE = (4.0, 2.0, 1.0, 0.0, 0.0, 0.0)


def sigmoid(z):
    # two-branch form keeps exp() from overflowing for large |z|
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class OracleConfig:
    importance: tuple = DEFAULT_IMPORTANCE
    window_len: int = 5
    link: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "importance", tuple(float(v) for v in self.importance))
        if self.window_len < 1:
            raise ConfigError("window_len must be >= 1")
        if self.link != "sigmoid":
            raise ConfigError(f"unsupported link {self.link!r}")

    @property
    def n_channels(self) -> int:
        return len(self.importance)

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.importance, dtype=np.float64)


def _check(win: np.ndarray, cfg: OracleConfig) -> np.ndarray:
    win = np.asarray(win, dtype=np.float64)
    if win.shape[-2:] != (cfg.window_len, cfg.n_channels):
        raise ConfigError(
            f"window shape {win.shape} does not match ({cfg.window_len}, {cfg.n_channels})"
        )
    return win


def logit(win, cfg: OracleConfig):
    win = _check(win, cfg)
    return (win * cfg.weights).sum(axis=(-2, -1))


def predict(win, cfg: OracleConfig):
    """Event probability for one window or a stack of windows."""
    return sigmoid(logit(win, cfg))


def shift_in(win: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Drop the oldest row and append ``row`` as the newest."""
    out = np.empty_like(win)
    out[:-1] = win[1:]
    out[-1] = row
    return out


def predictive_gain(history, candidate_row, k: int, cfg: OracleConfig) -> float:
    """Probability gain from revealing channel ``k`` of ``candidate_row``.

    ``history`` is the current window; its oldest row is dropped and the new
    row is either channel ``k`` alone or nothing.
    """
    if not 0 <= k < cfg.n_channels:
        raise IndexError(f"channel {k} out of range for K={cfg.n_channels}")
    history = _check(history, cfg)
    row = np.zeros(cfg.n_channels)
    empty = shift_in(history, row)
    row[k] = candidate_row[k]
    revealed = shift_in(history, row)
    return float(predict(revealed, cfg) - predict(empty, cfg))


def predictive_gains(history, candidate_row, cfg: OracleConfig) -> np.ndarray:
    """All K single-channel gains at once."""
    history = _check(history, cfg)
    empty = shift_in(history, np.zeros(cfg.n_channels))
    base = float(logit(empty, cfg))
    z = base + np.asarray(candidate_row, dtype=np.float64) * cfg.weights
    return sigmoid(z) - sigmoid(base)
