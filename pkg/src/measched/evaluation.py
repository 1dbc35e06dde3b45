"""Scoring policies on held-out trajectories.

Produces the per-policy accumulated-reward table, per-channel selection
frequencies split by the (hidden) patient state, per-step traces and a
selection-frequency feature ranking. The hidden state is read from the
trajectory for bookkeeping only; policies only ever receive windows.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .environment import MeasurementEnv, rollout
from .simulator import Trajectory


@dataclass
class PolicyResult:
    name: str
    mean_reward: float
    stderr: float
    episodes: int
    returns: list
    freq_overall: list
    freq_healthy: list
    freq_critical: list
    steps_healthy: int
    steps_critical: int

    @property
    def interval(self) -> tuple[float, float]:
        """mean +- 2 standard errors."""
        return self.mean_reward - 2 * self.stderr, self.mean_reward + 2 * self.stderr

    def state_dependence(self) -> np.ndarray:
        """Per-channel |critical - healthy| selection-rate gap."""
        return np.abs(np.asarray(self.freq_critical) - np.asarray(self.freq_healthy))

    def to_dict(self, with_returns: bool = False) -> dict:
        d = asdict(self)
        if not with_returns:
            d.pop("returns")
        return d


@dataclass
class EvalReport:
    results: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> PolicyResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def names(self) -> list[str]:
        return [r.name for r in self.results]

    def best(self, exclude: Sequence[str] = ()) -> PolicyResult:
        return max((r for r in self.results if r.name not in exclude), key=lambda r: r.mean_reward)

    def to_json(self) -> str:
        return json.dumps(
            {"config": self.config, "policies": [r.to_dict() for r in self.results]},
            indent=1,
            sort_keys=True,
        )

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["policy", "mean_reward", "stderr", "episodes"])
        for r in self.results:
            w.writerow([r.name, repr(r.mean_reward), repr(r.stderr), r.episodes])
        return buf.getvalue()


def _policy_name(policy) -> str:
    return getattr(policy, "name", type(policy).__name__)


def _run_episodes(env: MeasurementEnv, policy, dataset, indices):
    K = env.K
    counts = np.zeros((2, K))
    steps = np.zeros(2, dtype=np.int64)
    returns = []

    def on_step(info, action, rewards):
        counts[info.hidden_state] += action
        steps[info.hidden_state] += 1

    for i in indices:
        if hasattr(policy, "begin_episode"):
            policy.begin_episode(int(i))
        _, total = rollout(env, policy, dataset[i], on_step)
        returns.append(total)
    return returns, counts, steps


def _safe_div(a, b):
    return (a / b) if b else np.zeros_like(a)


def evaluate(
    policy,
    dataset: Sequence[Trajectory],
    env: MeasurementEnv,
    name: Optional[str] = None,
    workers: int = 1,
) -> PolicyResult:
    """Mean +- standard error of undiscounted returns, and selection statistics."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    n = len(dataset)
    if workers > 1 and n > 1:
        chunks = [c for c in np.array_split(np.arange(n), workers) if len(c)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_episodes, [env] * len(chunks), [policy] * len(chunks),
                                [dataset] * len(chunks), chunks))
        returns = [r for p in parts for r in p[0]]
        counts = sum(p[1] for p in parts)
        steps = sum(p[2] for p in parts)
    else:
        returns, counts, steps = _run_episodes(env, policy, dataset, range(n))

    arr = np.asarray(returns, dtype=np.float64)
    mean = float(arr.sum() / n)
    stderr = float(arr.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    total_steps = int(steps.sum())
    return PolicyResult(
        name=name or _policy_name(policy),
        mean_reward=mean,
        stderr=stderr,
        episodes=n,
        returns=arr.tolist(),
        freq_overall=_safe_div(counts.sum(axis=0), total_steps).tolist(),
        freq_healthy=_safe_div(counts[0], steps[0]).tolist(),
        freq_critical=_safe_div(counts[1], steps[1]).tolist(),
        steps_healthy=int(steps[0]),
        steps_critical=int(steps[1]),
    )


def evaluate_many(policies, dataset, env, config: Optional[dict] = None, workers: int = 1) -> EvalReport:
    report = EvalReport(config=dict(config or {}))
    for p in policies:
        report.results.append(evaluate(p, dataset, env, workers=workers))
    return report


@dataclass
class TraceRow:
    t: int
    hidden_state: int
    label: int
    action: list
    rewards: list
    probability: float


def trace_policy(policy, trajectory: Trajectory, env: MeasurementEnv, episode_index: int = 0) -> list[TraceRow]:
    rows: list[TraceRow] = []

    def on_step(info, action, rewards):
        rows.append(TraceRow(info.t, info.hidden_state, info.label,
                             [int(a) for a in action], rewards.tolist(), info.probability))

    if hasattr(policy, "begin_episode"):
        policy.begin_episode(episode_index)
    rollout(env, policy, trajectory, on_step)
    return rows


def trace_to_jsonl(rows: Sequence[TraceRow]) -> str:
    return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in rows)


def rank_features(result: PolicyResult) -> list[int]:
    """Channel indices by overall selection frequency, descending; ties by index."""
    freq = result.freq_overall
    return sorted(range(len(freq)), key=lambda k: (-freq[k], k))


def non_overlapping(better: PolicyResult, worse: PolicyResult) -> bool:
    """True when ``better``'s mean-2se lies strictly above ``worse``'s mean+2se."""
    return better.interval[0] > worse.interval[1]
