"""Dataset files: JSON-lines, one header line then one line per trajectory.

Header::

    {"format": "measched-dataset", "version": 1, "config": {...SimConfig...},
     "seed": <int>, "n": <int>, "K": <int>}

Trajectory record::

    {"states": [T ints], "values": [T*K floats, row-major],
     "mask": [T*K ints, row-major], "labels": [T ints],
     "terminal_step": <int or null>}

Floats are written with Python's shortest round-trip repr, so load/save is exact.
"""
from __future__ import annotations

import json
from typing import Optional

import numpy as np

from .simulator import SimConfig, Trajectory

DATASET_FORMAT = "measched-dataset"
DATASET_VERSION = 1


class FormatError(ValueError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def trajectory_to_record(tr: Trajectory) -> dict:
    return {
        "states": [int(s) for s in tr.states],
        "values": [float(v) for v in tr.values.ravel()],
        "mask": [int(m) for m in tr.mask.ravel()],
        "labels": [int(x) for x in tr.labels],
        "terminal_step": None if tr.terminal_step is None else int(tr.terminal_step),
    }


def record_to_trajectory(rec: dict, K: int) -> Trajectory:
    states = np.asarray(rec["states"], dtype=np.int8)
    T = len(states)
    values = np.asarray(rec["values"], dtype=np.float64).reshape(T, K)
    mask = np.asarray(rec["mask"], dtype=np.int8).reshape(T, K)
    labels = np.asarray(rec["labels"], dtype=np.int8)
    return Trajectory(states, values, mask, labels, rec["terminal_step"])


def dumps_dataset(dataset, cfg: SimConfig, seed: int) -> str:
    K = cfg.n_channels
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "config": cfg.to_dict(),
        "seed": int(seed),
        "n": len(dataset),
        "K": K,
    }
    lines = [_dumps(header)]
    lines += [_dumps(trajectory_to_record(tr)) for tr in dataset]
    return "\n".join(lines) + "\n"


def save_dataset(path, dataset, cfg: SimConfig, seed: int) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_dataset(dataset, cfg, seed))


def load_dataset(path) -> tuple[list[Trajectory], dict]:
    """Returns ``(trajectories, header)``."""
    with open(path) as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: bad header line") from e
        if header.get("format") != DATASET_FORMAT:
            raise FormatError(f"{path}: not a {DATASET_FORMAT} file")
        if header.get("version") != DATASET_VERSION:
            raise FormatError(f"{path}: unsupported version {header.get('version')}")
        K = header["K"]
        trajs = [record_to_trajectory(json.loads(line), K) for line in fh if line.strip()]
    if len(trajs) != header["n"]:
        raise FormatError(f"{path}: header says {header['n']} trajectories, found {len(trajs)}")
    return trajs, header


def sim_config_from_header(header: dict) -> SimConfig:
    return SimConfig(**header["config"])
