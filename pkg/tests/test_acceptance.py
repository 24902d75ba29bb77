"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``. The policy-recovery criteria
train 30 seeds on the 10-state chain and take roughly a minute on one core.
"""

import csv
import json
import math
import os
import subprocess
import sys
from collections import Counter
from itertools import combinations
from pathlib import Path

import numpy as np
import pytest

from rrd import oracle
from rrd import redistribution as rd
from rrd.cli import load_experiment, run_experiment, sweep_k
from rrd.core import ReplayBuffer, Trajectory, make_rng
from rrd.reward_model import RewardModel

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
SEED = 20240611


@pytest.fixture
def report(capsys, request):
    def emit(passed, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} {request.node.name}: {detail}")
        assert passed, detail
    return emit


def test_criterion_1_decomposition_identity(report):
    cert = oracle.verify_theorem1(120, make_rng(SEED), tol=1e-10)
    report(cert.passed, f"max |exact - (rd + var)| = {cert.max_abs_error:.2e} over "
                        f"{cert.instances_tested} instances, every K (tol 1e-10)")


def test_criterion_2_monotone_chain(report):
    cert = oracle.verify_proposition_chain(120, make_rng(SEED), slack=1e-12)
    report(cert.passed, f"largest chain violation {cert.max_abs_error:.2e} (slack 1e-12)")


def test_criterion_3_unbiased_estimator(report):
    cert = oracle.verify_unbiased_rd(120, make_rng(SEED), tol=1e-10)
    r = np.array([1.0, 2.0, 3.0, 4.0])
    penalties = [rd.unbiased_penalty_estimate(r[list(c)], 4) for c in combinations(range(4), 2)]
    micro = penalties == [2.0, 8.0, 18.0, 2.0, 8.0, 2.0] and abs(np.mean(penalties) - 20 / 3) <= 1e-12
    report(cert.passed and micro,
           f"exhaustive mean error {cert.max_abs_error:.2e} (tol 1e-10); micro penalties {penalties}")


def _fixed_point_buffer(rng, n=12, T=5, S=6, A=2):
    # equal lengths, each (s, a) at most once per trajectory
    trajs = []
    for _ in range(n):
        states = rng.permutation(S)[: T + 1]
        pairs = [(int(states[t]), int(rng.integers(A)), int(states[t + 1])) for t in range(T)]
        trajs.append(Trajectory(pairs, float(rng.normal(0, 3))))
    return trajs


def test_criterion_4_single_step_fixed_point(report):
    rng = make_rng(SEED)
    trajs = _fixed_point_buffer(rng)
    buf = ReplayBuffer(10**6)
    for t in trajs:
        buf.push(t)
    model = RewardModel("tabular", np.zeros(12), 6, 2)
    for _ in range(4000):
        _, g = rd.expected_rand_rd_loss_and_grad(model, trajs, 1)
        model = model.with_params(model.params - 0.02 * g)
    target, visited = rd.ircr_table(buf, 6, 2, scaled=True)
    fp_err = float(np.abs(model.table()[visited] - target[visited]).max())

    # variable lengths: weighted closed form vs scalar least squares on (T, R)
    wf_err = 0.0
    for _ in range(50):
        buf = ReplayBuffer(10**6)
        lengths, returns = [], []
        for _ in range(int(rng.integers(2, 7))):
            T = int(rng.integers(1, 9))
            ret = float(rng.normal(0, 5))
            buf.push(Trajectory([(0, 0, 1)] + [(1, 0, 1)] * (T - 1), ret))
            lengths.append(T)
            returns.append(ret)
        wf_err = max(wf_err, abs(rd.uniform_fixed_point_weighted(buf, 0, 0)
                                 - oracle.scalar_least_squares(lengths, returns)))
    report(fp_err <= 1e-4 and wf_err <= 1e-6,
           f"fixed point err {fp_err:.2e} (tol 1e-4); weighted vs lstsq {wf_err:.2e} (tol 1e-6)")


def test_criterion_5_gradients(report):
    cert = oracle.verify_gradients(30, make_rng(SEED), tol=1e-4)
    report(cert.passed, f"max componentwise rel err {cert.max_abs_error:.2e} over "
                        f"{cert.instances_tested} tabular/linear/mlp instances (tol 1e-4)")


def test_criterion_6_sampler_law(report):
    rng = make_rng(SEED)
    n = 6 * 10**4
    counts = Counter(rd.sample_subsequence(4, 2, rng).indices for _ in range(n))
    bound = 3 * math.sqrt(n * (1 / 6) * (5 / 6))
    worst = max(abs(c - n / 6) for c in counts.values())
    m = 10**5
    hits = np.bincount([rd.sample_subsequence(5, 1, rng).indices[0] for _ in range(m)], minlength=5)
    sigma = math.sqrt(0.2 * 0.8 / m)
    worst_incl = float(np.abs(hits / m - 0.2).max())
    ok = len(counts) == 6 and worst <= bound and worst_incl <= 3 * sigma
    report(ok, f"subset dev {worst:.0f} (3 sigma {bound:.0f}); inclusion dev {worst_incl:.4f} "
               f"(3 sigma {3 * sigma:.4f})")


@pytest.fixture(scope="module")
def chain10_summary(tmp_path_factory):
    exp = load_experiment(CONFIGS / "chain10_rrd.json")
    out = tmp_path_factory.mktemp("chain10")
    summary = run_experiment(exp, out)
    corrs = []
    for seed in summary["seeds"]:
        rows = list(csv.DictReader((out / f"run_{seed}.csv").open()))
        corrs.append(float(rows[-1]["corr"]) if rows[-1]["corr"] else float("nan"))
    return exp, summary, corrs


@pytest.mark.slow
def test_criterion_7_policy_recovery(report, chain10_summary):
    exp, summary, corrs = chain10_summary
    optimum = summary["optimal_return"]
    mean = summary["final_return_mean"]
    ok = (exp.repeat == 30 and exp.trainer.K == 4 and mean >= 0.95 * optimum
          and min(corrs) >= 0.8)
    report(ok, f"mean final return {mean:.3f} vs optimum {optimum} (need >= {0.95 * optimum:.2f}); "
               f"corr min {min(corrs):.3f} mean {np.mean(corrs):.3f} (need >= 0.8)")


@pytest.mark.slow
def test_criterion_8_larger_k_not_worse(report, tmp_path):
    exp = load_experiment(CONFIGS / "chain10_sweep.json")
    rows = sweep_k(exp, [1, 4], budget=8, out_dir=tmp_path)
    by_k = {r["k"]: r["final_return_mean"] for r in rows}
    report(exp.repeat == 30 and by_k[4] >= by_k[1],
           f"K=4 (M=2) mean {by_k[4]:.3f} vs K=1 (M=8) mean {by_k[1]:.3f} over {exp.repeat} seeds")


@pytest.mark.slow
def test_criterion_9_cli_determinism(report, tmp_path):
    cfg = json.loads((CONFIGS / "chain5_quick.json").read_text())
    outputs = []
    for name in ("a", "b"):
        cfg["output_dir"] = str(tmp_path / name)
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cfg))
        env = {**os.environ, "RRD_THREADS": "1"}
        subprocess.run([sys.executable, "-m", "rrd", "run", str(path)], check=True, env=env)
        outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
    same = outputs[0] == outputs[1] and len(outputs[0]) == cfg["repeat"] + 1
    report(same, f"{len(outputs[0])} files compared byte for byte across two runs")
