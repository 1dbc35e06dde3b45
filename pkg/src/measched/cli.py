"""Command-line entry point: ``measched simulate|train|evaluate|trace``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

from . import serialization
from .agent import DQNAgent, GreedyPolicy, DuelingQNetwork, train
from .baselines import ALL_KINDS, HeuristicPolicy
from .config import RunConfig, load_config
from .environment import MeasurementEnv
from .evaluation import evaluate_many, trace_policy, trace_to_jsonl
from .nn import load_checkpoint, save_checkpoint
from .simulator import ConfigError, generate_dataset, summarize

log = logging.getLogger("measched")


class CliError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON/YAML run config (default: $MEASCHED_CONFIG)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1, help="max worker processes")
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--importance", type=_floats, help="v1,..,vK")
    p.add_argument("--cost", type=_floats, help="c1,..,cK")
    p.add_argument("--epsilon-start", type=float)
    p.add_argument("--epsilon-end", type=float)
    p.add_argument("--epsilon-decay-frac", type=float)
    p.add_argument("--train-steps", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="measched", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate and save a trajectory dataset")
    _add_common(p)
    p.add_argument("--n", type=int, help="number of trajectories (default: eval.n_train/n_test)")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--out", required=True, help="dataset file (.jsonl)")

    p = sub.add_parser("train", help="train the DQN scheduler")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("evaluate", help="score DQN checkpoints and heuristic baselines")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", action="append", default=[], help="may be repeated")
    p.add_argument("--baselines", help="comma-separated heuristic names, 'all' or 'none'")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("trace", help="per-step policy trace as JSON-lines")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint")
    group.add_argument("--policy", choices=ALL_KINDS + ("F1_2_random", "F2_3_random"))
    p.add_argument("--index", type=int, default=0, help="trajectory index")
    p.add_argument("--out", required=True, help="trace file (.jsonl)")
    return parser


def config_from_args(args) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "env.lambda": args.lam,
        "env.cost": args.cost,
        "oracle.importance": args.importance,
        "dqn.eps_start": args.epsilon_start,
        "dqn.eps_end": args.epsilon_end,
        "dqn.eps_decay_frac": args.epsilon_decay_frac,
        "dqn.train_steps": args.train_steps,
    }
    if args.gamma is not None:
        overrides["env.gamma"] = args.gamma
        overrides["dqn.gamma"] = args.gamma
    if args.seed is not None:
        # an explicit --seed wins over seeds pinned in the file
        overrides.update({"dqn.seed": args.seed, "sim.seed": args.seed})
    return load_config(args.config, overrides)


def _atomic_write(path: Path, text: str) -> None:
    """Write via a temp file and rename so a failed run leaves no partial artifact."""
    path = Path(path)
    if path.is_dir():
        raise CliError(f"{path} is a directory")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_dir(path) -> Path:
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise CliError(f"{path} exists and is not a directory")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _csv_with_echo(cfg: RunConfig, body: str) -> str:
    return f"# config: {cfg.to_json()}\n" + body


def _load_dataset(path, cfg: RunConfig):
    if not Path(path).is_file():
        raise CliError(f"dataset {path} not found")
    data, header = serialization.load_dataset(path)
    if header["K"] != cfg.sim.n_channels:
        raise CliError(f"dataset has K={header['K']}, config expects {cfg.sim.n_channels}")
    return data, header


def _make_env(cfg: RunConfig) -> MeasurementEnv:
    return MeasurementEnv(cfg.oracle, cfg.env)


def cmd_simulate(args, cfg: RunConfig) -> int:
    n = args.n if args.n is not None else (cfg.eval.n_train if args.split == "train" else cfg.eval.n_test)
    if n < 1:
        raise CliError("--n must be >= 1")
    seed = cfg.train_seed if args.split == "train" else cfg.test_seed
    data = generate_dataset(cfg.sim, n, seed)
    _atomic_write(Path(args.out), serialization.dumps_dataset(data, cfg.sim, seed))
    s = summarize(data)
    print(
        f"wrote {n} trajectories to {args.out}: mean length {s.mean_length:.2f}, "
        f"event rate {s.event_rate:.3f}, missingness {s.missing_fraction:.3f}"
    )
    return 0


def _checkpoint_meta(cfg: RunConfig, dataset_header: dict, steps_done: int) -> dict:
    return {
        "config": cfg.to_dict(),
        "gamma": cfg.dqn.gamma,
        "dataset": {"seed": dataset_header["seed"], "n": dataset_header["n"]},
        "train_steps": steps_done,
        "state_dim": None,
        "n_channels": cfg.sim.n_channels,
    }


def cmd_train(args, cfg: RunConfig) -> int:
    data, header = _load_dataset(args.dataset, cfg)
    out = _out_dir(args.out)
    env = _make_env(cfg)
    agent = DQNAgent(env.state_dim, env.K, cfg.dqn)

    def progress(pt):
        log.info("step %d loss %.3f eps %.3f mean_return %.3f", pt.step, pt.loss, pt.epsilon, pt.mean_return)

    curve = train(agent, env, data, progress=progress)
    meta = _checkpoint_meta(cfg, header, cfg.dqn.train_steps)
    meta["state_dim"] = env.state_dim
    ckpt = out / "checkpoint.json"
    tmp = out / ".checkpoint.json.tmp"
    save_checkpoint(tmp, agent.online.net, meta)
    os.replace(tmp, ckpt)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "epsilon", "mean_return"])
    for pt in curve:
        w.writerow([pt.step, repr(pt.loss), repr(pt.epsilon), repr(pt.mean_return)])
    _atomic_write(out / "curve.csv", _csv_with_echo(cfg, buf.getvalue()))
    print(f"wrote {ckpt} and {out / 'curve.csv'}")
    return 0


def load_policy(path, cfg: RunConfig, name: Optional[str] = None) -> GreedyPolicy:
    if not Path(path).is_file():
        raise CliError(f"checkpoint {path} not found")
    net, meta = load_checkpoint(path)
    K = meta.get("n_channels", cfg.sim.n_channels)
    return GreedyPolicy(DuelingQNetwork(net.in_dim, K, net=net), name=name or "DQN")


def _checkpoint_id(path) -> dict:
    # name plus digest rather than a full path, so reports do not depend on the output location
    return {"file": Path(path).name, "sha256": hashlib.sha256(Path(path).read_bytes()).hexdigest()}


def _baseline_kinds(choice: Optional[str], cfg: RunConfig) -> tuple:
    if choice is None:
        return cfg.eval.baselines
    if choice == "none":
        return ()
    if choice == "all":
        return ALL_KINDS
    return tuple(s.strip() for s in choice.split(",") if s.strip())


def cmd_evaluate(args, cfg: RunConfig) -> int:
    data, header = _load_dataset(args.dataset, cfg)
    out = _out_dir(args.out)
    env = _make_env(cfg)
    policies = []
    for i, path in enumerate(args.checkpoint):
        name = "DQN" if len(args.checkpoint) == 1 else f"DQN[{Path(path).parent.name or i}]"
        policies.append(load_policy(path, cfg, name))
    for kind in _baseline_kinds(args.baselines, cfg):
        policies.append(HeuristicPolicy(kind, cfg.sim.n_channels, cfg.policy_seed))
    if not policies:
        raise CliError("nothing to evaluate")
    echo = {"run": cfg.to_dict(), "dataset": {"seed": header["seed"], "n": header["n"]},
            "checkpoints": [_checkpoint_id(p) for p in args.checkpoint]}
    report = evaluate_many(policies, data, env, config=echo, workers=max(1, args.threads))
    _atomic_write(out / "table.csv", _csv_with_echo(cfg, report.table_csv()))
    _atomic_write(out / "report.json", report.to_json() + "\n")
    for r in report.results:
        print(f"{r.name:>14s}  {r.mean_reward:9.3f} +- {r.stderr:.3f}")
    return 0


def cmd_trace(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    if out.is_dir():
        raise CliError(f"{out} is a directory")
    data, header = _load_dataset(args.dataset, cfg)
    if not 0 <= args.index < len(data):
        raise CliError(f"--index {args.index} out of range for {len(data)} trajectories")
    if args.checkpoint:
        policy = load_policy(args.checkpoint, cfg)
    else:
        policy = HeuristicPolicy(args.policy, cfg.sim.n_channels, cfg.policy_seed)
    rows = trace_policy(policy, data[args.index], _make_env(cfg), episode_index=args.index)
    head = {"header": {"config": cfg.to_dict(), "policy": getattr(policy, "name", "?"),
                       "index": args.index, "dataset_seed": header["seed"]}}
    _atomic_write(out, json.dumps(head, sort_keys=True) + "\n" + trace_to_jsonl(rows))
    print(f"wrote {len(rows)} steps to {out}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate, "trace": cmd_trace}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](args, cfg)
    except (CliError, ConfigError, serialization.FormatError, OSError) as e:
        print(f"measched {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
