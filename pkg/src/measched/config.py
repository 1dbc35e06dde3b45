"""Run configuration: one nested file (JSON or YAML) plus command-line overrides.

Sections and their defaults::

    seed: 0                      # global seed; see RunConfig.*_seed
    out_dir: "runs"
    sim:    SimConfig fields     (p_h2c 0.1, p_c2h 0.3, terminal_run 5, horizon 5,
                                  n_channels 6, len_min 20, len_max 40,
                                  missing_rate 0.2, bernoulli_p 0.5,
                                  noise_enabled true, initial_state 0)
    oracle: importance [1,2,4,0,0,0], window_len 5, link "sigmoid"
    env:    lambda 105, gamma 0.99, cost null (= all 1), include_mask false
    dqn:    DqnConfig fields     (hidden [64,64], eps 1.0 -> 0.05 over half of
                                  train_steps, replay 100000, batch 64,
                                  target_sync 1000, train_steps, lr, ...)
    eval:   n_train 5000, n_test 500, train_seed null, test_seed null,
            baselines [all seven + never_measure], policy_seed null

``env.gamma`` and ``dqn.gamma`` are one knob: setting either sets both.
Unknown keys are rejected.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .agent import DqnConfig
from .baselines import ALL_KINDS
from .environment import EnvConfig
from .oracle import OracleConfig
from .simulator import ConfigError, SimConfig

CONFIG_ENV_VAR = "MEASCHED_CONFIG"


@dataclass(frozen=True)
class EvalConfig:
    n_train: int = 5000
    n_test: int = 500
    train_seed: Optional[int] = None
    test_seed: Optional[int] = None
    policy_seed: Optional[int] = None
    baselines: tuple = ALL_KINDS

    def __post_init__(self):
        object.__setattr__(self, "baselines", tuple(self.baselines))
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be >= 1")


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def _build(cls, section: str, values: dict, rename: Optional[dict] = None):
    rename = rename or {}
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    kwargs = {}
    allowed = _field_names(cls)
    for key, v in values.items():
        name = rename.get(key, key)
        if name not in allowed or name in rename.values() and key not in rename:
            raise ConfigError(f"unknown key {section}.{key}")
        if isinstance(v, list):
            v = tuple(v)
        kwargs[name] = v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad {section} section: {e}") from e


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    sim: SimConfig = field(default_factory=SimConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.oracle.n_channels != self.sim.n_channels:
            raise ConfigError(
                f"oracle.importance has {self.oracle.n_channels} entries, sim.n_channels is {self.sim.n_channels}"
            )
        self.env.cost_vector(self.sim.n_channels)
        if self.env.gamma != self.dqn.gamma:
            raise ConfigError("env.gamma and dqn.gamma disagree")

    @property
    def train_seed(self) -> int:
        return self.seed if self.eval.train_seed is None else self.eval.train_seed

    @property
    def test_seed(self) -> int:
        return self.seed + 1 if self.eval.test_seed is None else self.eval.test_seed

    @property
    def policy_seed(self) -> int:
        return self.seed if self.eval.policy_seed is None else self.eval.policy_seed

    def to_dict(self) -> dict:
        env = {
            "lambda": self.env.lam,
            "gamma": self.env.gamma,
            "cost": None if self.env.cost is None else list(self.env.cost),
            "include_mask": self.env.include_mask,
        }

        def plain(obj):
            out = {}
            for f in fields(obj):
                v = getattr(obj, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
            return out

        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "sim": plain(self.sim),
            "oracle": plain(self.oracle),
            "env": env,
            "dqn": plain(self.dqn),
            "eval": plain(self.eval),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


SECTIONS = ("sim", "oracle", "env", "dqn", "eval")


def from_dict(d: dict) -> RunConfig:
    d = copy.deepcopy(d or {})
    unknown = set(d) - set(SECTIONS) - {"seed", "out_dir"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = int(d.get("seed", 0))
    env_d = dict(d.get("env", {}))
    dqn_d = dict(d.get("dqn", {}))
    # single discount knob shared by env and dqn
    if "gamma" in env_d and "gamma" not in dqn_d:
        dqn_d["gamma"] = env_d["gamma"]
    elif "gamma" in dqn_d and "gamma" not in env_d:
        env_d["gamma"] = dqn_d["gamma"]
    dqn_d.setdefault("seed", seed)
    sim_d = dict(d.get("sim", {}))
    sim_d.setdefault("seed", seed)
    return RunConfig(
        seed=seed,
        out_dir=str(d.get("out_dir", "runs")),
        sim=_build(SimConfig, "sim", sim_d),
        oracle=_build(OracleConfig, "oracle", d.get("oracle", {})),
        env=_build(EnvConfig, "env", env_d, rename={"lambda": "lam"}),
        dqn=_build(DqnConfig, "dqn", dqn_d),
        eval=_build(EvalConfig, "eval", d.get("eval", {})),
    )


def read_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def apply_overrides(d: dict, overrides: dict[str, Any]) -> dict:
    """Set dotted keys, e.g. ``{"env.gamma": 0.0}``; ``None`` values are skipped."""
    d = copy.deepcopy(d)
    for dotted, v in overrides.items():
        if v is None:
            continue
        parts = dotted.split(".")
        node = d
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = v
    return d


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Load ``path`` (or ``$MEASCHED_CONFIG``, or defaults) and apply overrides."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    d = read_config_file(path) if path else {}
    if overrides:
        d = apply_overrides(d, overrides)
    return from_dict(d)
