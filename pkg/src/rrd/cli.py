"""Command-line entry point ``rrd``.

Commands
--------
run        train every seed of an experiment config, write CSV logs and a summary
verify     run verification certificates (theorem1, propositions, gradients, all)
sweep-k    rerun an experiment over several subsequence lengths at fixed M*K
dump-env   materialize an environment spec as a full tabular JSON file
rollout    write uniform-random-policy trajectories as JSON lines
fit-reward fit a tabular reward model to stored trajectories

Exit codes: 0 success, 1 runtime failure (or failed certificate), 2 bad config.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import oracle
from . import redistribution as rd
from .core import dump_trajectories, load_trajectories, make_rng
from .envs import dump_env, env_from_spec, rollout
from .reward_model import SGD, init_params, save_model
from .trainer import ConfigError, TrainerConfig, atomic_write, train

EXPERIMENT_KEYS = {"env", "trainer", "output_dir", "repeat"}


@dataclass
class ExperimentConfig:
    env: dict
    trainer: TrainerConfig
    output_dir: str
    repeat: int = 1


def parse_experiment(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = set(data) - EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown config key")
    for key in ("env", "output_dir"):
        if key not in data:
            raise ConfigError(f"{key}: missing")
    try:
        env_from_spec(data["env"])
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"env: {exc}") from None
    try:
        trainer = TrainerConfig.from_dict(data.get("trainer", {}))
    except ConfigError as exc:
        raise ConfigError(f"trainer.{exc}") from None
    except TypeError as exc:
        raise ConfigError(f"trainer: {exc}") from None
    repeat = data.get("repeat", 1)
    if not isinstance(repeat, int) or repeat < 1:
        raise ConfigError("repeat: must be a positive integer")
    return ExperimentConfig(data["env"], trainer, str(data["output_dir"]), repeat)


def load_experiment(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    return parse_experiment(data)


def _train_seed(args):
    env_spec, config = args
    return config.seed, train(env_from_spec(env_spec), config).to_csv_string()


def _max_workers() -> int:
    raw = os.environ.get("RRD_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError("RRD_THREADS: must be an integer") from None


def run_experiment(exp: ExperimentConfig, out_dir=None) -> dict:
    """Train ``exp.repeat`` seeds, write ``run_<seed>.csv`` files and ``summary.json``."""
    out = Path(out_dir if out_dir is not None else exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(exp.env, replace(exp.trainer, seed=exp.trainer.seed + i)) for i in range(exp.repeat)]
    workers = min(_max_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_seed, jobs))
    else:
        results = [_train_seed(job) for job in jobs]

    finals, corrs = [], []
    for seed, text in results:
        atomic_write(out / f"run_{seed}.csv", text)
        rows = list(csv.DictReader(io.StringIO(text)))
        if rows:
            finals.append(float(rows[-1]["true_return"]))
            if rows[-1]["corr"]:
                corrs.append(float(rows[-1]["corr"]))
    summary = {
        "seeds": [seed for seed, _ in results],
        "final_returns": finals,
        "final_return_mean": float(np.mean(finals)) if finals else None,
        "final_return_std": float(np.std(finals)) if finals else None,
        "final_corr_mean": float(np.mean(corrs)) if corrs else None,
        "optimal_return": oracle.optimal_return(env_from_spec(exp.env)),
    }
    atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def sweep_k(exp: ExperimentConfig, k_values, budget=None, out_dir=None) -> list[dict]:
    """Run the experiment for each K with ``M = budget // K`` (at least 1)."""
    out = Path(out_dir if out_dir is not None else exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    horizon = env_from_spec(exp.env).horizon
    budget = budget if budget is not None else exp.trainer.M * exp.trainer.K
    rows = []
    for k in k_values:
        if k < 1:
            raise ConfigError(f"k: values must be >= 1, got {k}")
        k_eff = min(k, horizon)
        m = max(1, budget // k_eff)
        try:
            trainer = replace(exp.trainer, K=k_eff, M=m)
        except ConfigError as exc:
            raise ConfigError(f"trainer.{exc}") from None
        summary = run_experiment(replace(exp, trainer=trainer), out / f"k_{k}")
        rows.append({"k": k, "final_return_mean": summary["final_return_mean"],
                     "final_return_std": summary["final_return_std"],
                     "corr_mean": summary["final_corr_mean"], "clamped": k != k_eff})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k", "final_return_mean", "final_return_std", "corr_mean", "clamped"])
    for row in rows:
        writer.writerow([row["k"], repr(row["final_return_mean"]), repr(row["final_return_std"]),
                         "" if row["corr_mean"] is None else repr(row["corr_mean"]),
                         str(row["clamped"]).lower()])
    atomic_write(out / "sweep_k.csv", buf.getvalue())
    return rows


def _read_spec(text: str) -> dict:
    if os.path.exists(text):
        with open(text) as fh:
            return json.load(fh)
    return json.loads(text)


def fit_reward(trajs, K: int, steps: int, lr: float, seed: int, M: int = 4):
    S = 1 + max(int(max(t.states.max(), t.next_states.max())) for t in trajs)
    A = 1 + max(int(t.actions.max()) for t in trajs)
    model = init_params("tabular", {"state_count": S, "action_count": A})
    opt = SGD(lr)
    rng = make_rng(seed)
    for _ in range(steps):
        idx = rng.integers(0, len(trajs), size=M)
        batch = [trajs[i] for i in idx]
        _, grad = rd.rand_rd_loss_and_grad(model, batch, rd.sample_index_sets(batch, K, rng))
        model = opt.step(model, grad)
    return model, rd.loss_rand_rd(model, trajs, K, mode="closed_form")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrd", description="Randomized return decomposition toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train all seeds of an experiment config")
    p.add_argument("config")
    p.add_argument("--out", help="override output_dir")

    p = sub.add_parser("verify", help="print verification certificates as JSON lines")
    p.add_argument("suite", choices=["theorem1", "propositions", "gradients", "all"])
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep-k", help="sweep subsequence length at fixed M*K")
    p.add_argument("config")
    p.add_argument("--k", required=True, help="comma separated K values")
    p.add_argument("--budget", type=int, help="transitions per batch (default: config M*K)")
    p.add_argument("--out", help="override output_dir")

    p = sub.add_parser("dump-env", help="write a fully materialized environment")
    p.add_argument("spec", help="env spec JSON file or inline JSON")
    p.add_argument("out")

    p = sub.add_parser("rollout", help="write random-policy trajectories as JSON lines")
    p.add_argument("spec")
    p.add_argument("out")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fit-reward", help="fit a tabular proxy reward to stored trajectories")
    p.add_argument("trajectories")
    p.add_argument("out")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            run_experiment(load_experiment(args.config), args.out)
        elif args.command == "sweep-k":
            try:
                ks = [int(k) for k in args.k.split(",") if k.strip()]
            except ValueError:
                raise ConfigError("k: expected comma separated integers") from None
            sweep_k(load_experiment(args.config), ks, args.budget, args.out)
        elif args.command == "verify":
            certs = oracle.run_suite(args.suite, args.n, make_rng(args.seed))
            for cert in certs:
                print(cert.to_json())
            if not all(c.passed for c in certs):
                for cert in certs:
                    if not cert.passed:
                        print(f"FAILED: {cert.to_json()}", file=sys.stderr)
                return 1
        elif args.command == "dump-env":
            try:
                env = env_from_spec(_read_spec(args.spec))
            except (ValueError, TypeError, KeyError) as exc:
                raise ConfigError(f"env: {exc}") from None
            dump_env(env, args.out)
        elif args.command == "rollout":
            env = env_from_spec(_read_spec(args.spec))
            rng = make_rng(args.seed)
            policy = lambda s, g: int(g.integers(env.action_count))
            dump_trajectories([rollout(env, policy, rng) for _ in range(args.episodes)], args.out)
        elif args.command == "fit-reward":
            model, report = fit_reward(load_trajectories(args.trajectories), args.k,
                                       args.steps, args.lr, args.seed)
            save_model(model, args.out)
            print(report.to_json())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
