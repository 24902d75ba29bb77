import json
from math import comb

import numpy as np
import pytest

from rrd import oracle
from rrd import redistribution as rd
from rrd.core import Trajectory, make_rng
from rrd.envs import make_chain_env, make_keydoor_gridworld
from rrd.oracle import (VerificationCertificate, enumerate_subsets, exact_expectation,
                        finite_difference_grad, optimal_return, squared_residual)
from rrd.reward_model import RewardModel

from conftest import walk


def test_enumerate_subsets_examples():
    assert len(enumerate_subsets(4, 2)) == 6
    assert [s.indices for s in enumerate_subsets(3, 3)] == [(0, 1, 2)]
    assert [s.indices for s in enumerate_subsets(5, 1)] == [(i,) for i in range(5)]
    for T in range(1, 9):
        for K in range(1, T + 1):
            subsets = [s.indices for s in enumerate_subsets(T, K)]
            assert len(subsets) == len(set(subsets)) == comb(T, K)
            assert subsets == sorted(subsets)
    with pytest.raises(ValueError):
        enumerate_subsets(17, 2)


def test_exact_expectation_examples(walk1234):
    model, traj = walk1234
    assert exact_expectation(model, traj, 2, rd.mc_return_estimate) == pytest.approx(10.0)
    assert exact_expectation(model, traj, 2, squared_residual) == pytest.approx(20 / 3)
    assert exact_expectation(model, traj, 2, lambda m, t, i: 1.0) == 1.0


def test_finite_difference_examples():
    model = RewardModel("tabular", [3.0], 1, 1)
    assert finite_difference_grad(model, lambda m: m.params[0] ** 2, 1e-5)[0] == pytest.approx(6.0, abs=1e-6)
    lin = RewardModel("tabular", [0.3, -2.0], 2, 1)
    for h in (1e-1, 1e-3, 1.0):
        g = finite_difference_grad(lin, lambda m: 2 * m.params[0] - 5 * m.params[1], h)
        assert np.allclose(g, [2.0, -5.0], atol=1e-12)
    with pytest.raises(ValueError):
        finite_difference_grad(lin, lambda m: 0.0, 0.0)


def test_certificate_invariant_and_json():
    cert = VerificationCertificate.from_errors("x", 3, 1e-12, 1e-10)
    assert cert.passed
    assert json.loads(cert.to_json())["check_name"] == "x"
    assert not VerificationCertificate.from_errors("x", 3, 1.0, 1e-10).passed
    with pytest.raises(ValueError):
        VerificationCertificate("x", 1, 1.0, 1e-10, True)


def test_suites_pass_and_are_deterministic():
    a = oracle.run_suite("all", 20, make_rng(3))
    b = oracle.run_suite("all", 20, make_rng(3))
    assert all(c.passed for c in a)
    assert [c.to_json() for c in a] == [c.to_json() for c in b]
    with pytest.raises(ValueError):
        oracle.run_suite("nope", 1, make_rng(0))


def test_decomposition_constant_rewards_and_full_length():
    model, traj = walk([0.4] * 6, 3.0)
    for K in range(1, 7):
        assert oracle.enumerated_variance(model, traj, K) == pytest.approx(0.0, abs=1e-12)
    model, traj = walk([0.4, 1.0, -2.0], 3.0)
    assert rd.loss_rand_rd(model, [traj], 3, mode="exact").total == pytest.approx(
        rd.loss_rd(model, [traj]).total, abs=1e-12)


def test_chain_constant_model_and_two_steps():
    model, traj = walk([1.0] * 5, 2.0)
    chain = [rd.loss_rand_rd(model, [traj], K, mode="exact").total for K in range(1, 6)]
    assert chain == pytest.approx([9.0] * 5, abs=1e-12)
    model, traj = walk([1.0, -1.0], 0.5)
    chain = [rd.loss_rand_rd(model, [traj], K, mode="exact").total for K in (1, 2)]
    assert chain[0] >= chain[1] == pytest.approx(0.25)


def test_tabular_gradient_certificate_near_zero():
    cert = oracle.verify_gradients(20, make_rng(0), kinds=("tabular",))
    assert cert.passed and cert.max_abs_error <= 1e-6


def test_biased_sampler_is_caught(monkeypatch):
    def biased(T, K, rng):
        # favours early indices: inclusion probability is no longer K/T
        if K >= T:
            return rd.SubsequenceIndexSet(tuple(range(T)), T)
        p = np.linspace(2.0, 1.0, T)
        idx = rng.choice(T, size=K, replace=False, p=p / p.sum())
        return rd.SubsequenceIndexSet(tuple(sorted(int(i) for i in idx)), T)

    monkeypatch.setattr(rd, "sample_subsequence", biased)
    certs = oracle.run_suite("theorem1", 10, make_rng(1))
    assert not all(c.passed for c in certs)
    assert not [c for c in certs if c.check_name == "sampler_inclusion_zscore"][0].passed


def test_optimal_return_examples():
    assert optimal_return(make_chain_env(5, 1.0, -1.0, 20)) == 4.0
    assert optimal_return(make_chain_env(10, 1.0, -1.0, 12)) == 9.0
    assert optimal_return(make_chain_env(10, 1.0, -1.0, 5)) == 5.0
    assert optimal_return(make_keydoor_gridworld(2, 2, 10)) == 1.5


def test_scalar_least_squares():
    assert oracle.scalar_least_squares([2, 4], [4, 4]) == pytest.approx(1.2)
    assert oracle.scalar_least_squares([5], [10]) == pytest.approx(2.0)
