import csv
import json

import pytest

from rrd import redistribution as rd
from rrd.cli import main, parse_experiment
from rrd.core import load_trajectories
from rrd.reward_model import load_model
from rrd.trainer import ConfigError

CHAIN = {"type": "chain", "n_states": 5, "step_reward_right": 1.0, "step_reward_left": -1.0, "horizon": 8}
TRAINER = {"objective": "rand_rd", "K": 3, "M": 4, "reward_lr": 0.006, "gamma": 0.3,
           "epsilon_schedule": [1.0, 0.1, 40], "buffer_capacity": 1000, "total_episodes": 60, "seed": 0}


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("RRD_THREADS", "1")


def write_config(tmp_path, name="exp.json", **trainer):
    path = tmp_path / name
    data = {"env": CHAIN, "trainer": {**TRAINER, **trainer}, "output_dir": str(tmp_path / "out"),
            "repeat": 3}
    path.write_text(json.dumps(data))
    return path


def snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*"))
            if p.is_file()}


def test_run_writes_per_seed_files(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run", str(cfg)]) == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in out.iterdir()) == ["run_0.csv", "run_1.csv", "run_2.csv", "summary.json"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [0, 1, 2]
    assert len(summary["final_returns"]) == 3
    assert summary["optimal_return"] == 4.0
    header = (out / "run_0.csv").read_text().splitlines()[0]
    assert header == "episode,true_return,loss_total,loss_rd,loss_var,corr"


def test_run_is_byte_identical(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    main(["run", str(cfg), "--out", str(tmp_path / "a")])
    main(["run", str(cfg), "--out", str(tmp_path / "b")])
    monkeypatch.setenv("RRD_THREADS", "2")
    main(["run", str(cfg), "--out", str(tmp_path / "c")])
    a = snapshot(tmp_path / "a")
    assert a == snapshot(tmp_path / "b") == snapshot(tmp_path / "c")


def test_bad_gamma_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, gamma=1.5)
    assert main(["run", str(cfg)]) == 2
    assert "gamma" in capsys.readouterr().err


def test_unknown_keys_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, learning_rate=0.1)
    assert main(["run", str(cfg)]) == 2
    assert "learning_rate" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="repeat"):
        parse_experiment({"env": CHAIN, "trainer": TRAINER, "output_dir": "x", "repeat": 0})
    with pytest.raises(ConfigError, match="colour"):
        parse_experiment({"env": CHAIN, "trainer": TRAINER, "output_dir": "x", "repeat": 1, "colour": 1})
    with pytest.raises(ConfigError, match="^env"):
        parse_experiment({"env": {"type": "maze"}, "trainer": TRAINER, "output_dir": "x", "repeat": 1})


def test_missing_config_exits_nonzero(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) in (1, 2)
    assert capsys.readouterr().err


def test_verify_prints_certificates(capsys):
    assert main(["verify", "all", "--n", "10", "--seed", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    certs = [json.loads(line) for line in lines]
    assert len(certs) == 5 and all(c["passed"] for c in certs)


def test_verify_gradients_tabular_exact(capsys):
    assert main(["verify", "gradients", "--n", "6"]) == 0
    cert = json.loads(capsys.readouterr().out)
    assert cert["max_abs_error"] <= 1e-4


def test_verify_fails_with_biased_sampler(monkeypatch, capsys):
    def first_k(T, K, rng):
        return rd.SubsequenceIndexSet(tuple(range(min(K, T))), T)

    monkeypatch.setattr(rd, "sample_subsequence", first_k)
    assert main(["verify", "theorem1", "--n", "5"]) == 1
    assert "FAILED" in capsys.readouterr().err


def test_sweep_k_rows_and_budget(tmp_path):
    cfg = write_config(tmp_path, total_episodes=20)
    assert main(["sweep-k", str(cfg), "--k", "1,2,4,12", "--budget", "8"]) == 0
    out = tmp_path / "out"
    rows = list(csv.DictReader((out / "sweep_k.csv").open()))
    assert [r["k"] for r in rows] == ["1", "2", "4", "12"]
    assert list(rows[0]) == ["k", "final_return_mean", "final_return_std", "corr_mean", "clamped"]
    assert [r["clamped"] for r in rows] == ["false", "false", "false", "true"]
    for k in (1, 2, 4, 12):
        assert (out / f"k_{k}" / "summary.json").exists()
    assert main(["sweep-k", str(cfg), "--k", "0"]) == 2
    assert main(["sweep-k", str(cfg), "--k", "a,b"]) == 2


def test_sweep_budget_arithmetic(tmp_path, monkeypatch):
    from rrd import cli
    seen = []
    monkeypatch.setattr(cli, "run_experiment",
                        lambda exp, out: seen.append((exp.trainer.K, exp.trainer.M)) or
                        {"final_return_mean": 0.0, "final_return_std": 0.0, "final_corr_mean": None})
    exp = parse_experiment({"env": CHAIN, "trainer": TRAINER, "output_dir": str(tmp_path), "repeat": 1})
    cli.sweep_k(exp, [1, 4, 8, 20], budget=8)
    assert seen == [(1, 8), (4, 2), (8, 1), (8, 1)]


def test_dump_env(tmp_path, capsys):
    out = tmp_path / "env.json"
    assert main(["dump-env", json.dumps(CHAIN), str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["type"] == "tabular" and data["horizon"] == 8
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"type": "chain", "n_states": 1}))
    assert main(["dump-env", str(spec), str(tmp_path / "bad.json")]) == 2


def test_rollout_and_fit_reward(tmp_path, capsys):
    trajs = tmp_path / "t.jsonl"
    assert main(["rollout", json.dumps(CHAIN), str(trajs), "--episodes", "40", "--seed", "3"]) == 0
    loaded = load_trajectories(trajs)
    assert len(loaded) == 40
    model_path = tmp_path / "model.json"
    assert main(["fit-reward", str(trajs), str(model_path), "--k", "2", "--steps", "300"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"total", "rd", "var"}
    assert load_model(model_path).kind == "tabular"
