"""Brute-force references used to certify the redistribution code.

Everything here is deliberately naive: subset enumeration, central finite
differences, scalar least squares and backward induction. Certificates are
deterministic given the rng they are handed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from . import redistribution as rd
from .core import RngStream, Trajectory
from .envs import EpisodicFeedbackEnv, make_random_additive_env, rollout
from .redistribution import SubsequenceIndexSet
from .reward_model import RewardModel, init_params

MAX_T = 16


@dataclass(frozen=True)
class VerificationCertificate:
    check_name: str
    instances_tested: int
    max_abs_error: float
    tolerance: float
    passed: bool

    def __post_init__(self):
        if self.passed != (self.max_abs_error <= self.tolerance):
            raise ValueError("passed must equal max_abs_error <= tolerance")

    @classmethod
    def from_errors(cls, name: str, instances: int, max_err: float, tol: float):
        max_err = float(max_err)
        return cls(name, instances, max_err, tol, bool(max_err <= tol))

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def enumerate_subsets(T: int, K: int) -> list[SubsequenceIndexSet]:
    """All K-subsets of ``range(T)`` in lexicographic order."""
    if T > MAX_T:
        raise ValueError(f"enumeration limited to T <= {MAX_T}")
    if not 1 <= K <= T:
        raise ValueError("need 1 <= K <= T")
    return [SubsequenceIndexSet(c, T) for c in combinations(range(T), K)]


def exact_expectation(model: RewardModel, trajectory: Trajectory, K: int,
                      f: Callable[[RewardModel, Trajectory, SubsequenceIndexSet], float]) -> float:
    """Unweighted mean of ``f(model, trajectory, I)`` over every K-subset."""
    if trajectory.length > MAX_T:
        raise ValueError(f"enumeration limited to T <= {MAX_T}")
    values = [f(model, trajectory, idx)
              for idx in enumerate_subsets(trajectory.length, min(K, trajectory.length))]
    return math.fsum(values) / len(values)


def squared_residual(model, trajectory, idx) -> float:
    return (trajectory.episodic_return - rd.mc_return_estimate(model, trajectory, idx)) ** 2


def enumerated_variance(model, trajectory, K) -> float:
    mean = exact_expectation(model, trajectory, K, rd.mc_return_estimate)
    return exact_expectation(
        model, trajectory, K,
        lambda m, tr, idx: (rd.mc_return_estimate(m, tr, idx) - mean) ** 2)


def finite_difference_grad(model: RewardModel, f: Callable[[RewardModel], float],
                           h: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(p + h e_i) - f(p - h e_i)) / 2h`` per parameter."""
    if h <= 0:
        raise ValueError("h must be positive")
    p = model.params
    g = np.zeros(p.size)
    for i in range(p.size):
        up = p.copy()
        up[i] += h
        down = p.copy()
        down[i] -= h
        g[i] = (f(model.with_params(up)) - f(model.with_params(down))) / (2 * h)
    return g


def scalar_least_squares(lengths, returns) -> float:
    """argmin_r sum (R - T r)^2, solved as a one-column lstsq problem."""
    X = np.asarray(lengths, dtype=float)[:, None]
    y = np.asarray(returns, dtype=float)
    return float(np.linalg.lstsq(X, y, rcond=None)[0][0])


def optimal_return(env: EpisodicFeedbackEnv) -> float:
    """Best expected undiscounted return by backward induction over the horizon."""
    mdp = env.mdp
    P, R = mdp.transition_table, mdp.hidden_reward_table
    live = ~mdp.terminal_mask
    V = np.zeros(mdp.state_count)
    for _ in range(mdp.horizon):
        Q = R + P @ (V * live)
        V = Q.max(axis=1)
    return float(mdp.initial_distribution @ V)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)


def random_instance(rng: RngStream, kind: str = "tabular", T: int | None = None,
                    batch_size: int | None = None):
    """A random environment, reward model and batch of equal-length trajectories."""
    T = int(rng.integers(2, 9)) if T is None else T
    S = int(rng.integers(2, 5))
    A = int(rng.integers(1, 4))
    env = make_random_additive_env(S, A, T, rng)
    model = init_params(kind, {"state_count": S, "action_count": A, "hidden": (5,)}, rng)
    model = model.with_params(rng.normal(0.0, 1.0, size=model.n_params))
    n = int(rng.integers(1, 4)) if batch_size is None else batch_size
    policy = lambda s, g: int(g.integers(A))
    batch = [rollout(env, policy, rng) for _ in range(n)]
    return env, model, batch


def verify_theorem1(instance_count: int, rng: RngStream, tol: float = 1e-10) -> VerificationCertificate:
    """Randomized loss equals RD loss plus estimator variance, in both forms.

    For each instance and every K in 1..T the enumerated randomized loss is
    compared with the RD loss plus (a) the enumerated variance and (b) the
    closed-form variance with the interpolation weight.
    """
    kinds = ("tabular", "linear", "mlp")
    worst = 0.0
    for i in range(instance_count):
        _, model, batch = random_instance(rng, kinds[i % 3])
        T = batch[0].length
        base = rd.loss_rd(model, batch).total
        for K in range(1, T + 1):
            total = math.fsum(exact_expectation(model, tr, K, squared_residual) for tr in batch) / len(batch)
            var_enum = math.fsum(enumerated_variance(model, tr, K) for tr in batch) / len(batch)
            var_formula = math.fsum(rd.variance_penalty(model, tr, K, "formula") for tr in batch) / len(batch)
            worst = max(worst, abs(total - (base + var_enum)), abs(total - (base + var_formula)))
    return VerificationCertificate.from_errors("theorem1_loss_decomposition", instance_count, worst, tol)


def verify_unbiased_rd(instance_count: int, rng: RngStream, tol: float = 1e-10) -> VerificationCertificate:
    """Exhaustive mean of the unbiased estimator equals the RD loss for K >= 2."""
    worst = 0.0
    for _ in range(instance_count):
        _, model, batch = random_instance(rng, "tabular")
        traj = batch[0]
        T = traj.length
        target = rd.loss_rd(model, [traj]).total
        for K in range(2, T + 1):
            mean = exact_expectation(
                model, traj, K,
                lambda m, tr, idx: rd.loss_rd_unbiased(m, [tr], K, index_sets=[[idx]]).total)
            worst = max(worst, abs(mean - target))
    return VerificationCertificate.from_errors("unbiased_rd_estimator", instance_count, worst, tol)


def verify_sampler(rng: RngStream, draws: int = 20000, tol: float = 5.0) -> VerificationCertificate:
    """Inclusion frequency of every index is K/T, as a max z-score.

    Exercises the production sampler (the enumeration checks never touch it).
    A biased sampler shows up as a z-score far above ``tol``.
    """
    worst = 0.0
    cases = [(T, K) for T in (3, 5, 8) for K in range(1, T)]
    for T, K in cases:
        counts = np.zeros(T)
        for _ in range(draws):
            counts[list(rd.sample_subsequence(T, K, rng).indices)] += 1
        p = K / T
        z = np.abs(counts / draws - p) / math.sqrt(p * (1 - p) / draws)
        worst = max(worst, float(z.max()))
    return VerificationCertificate.from_errors("sampler_inclusion_zscore", len(cases), worst, tol)


def verify_proposition_chain(instance_count: int, rng: RngStream,
                             slack: float = 1e-12) -> VerificationCertificate:
    """L^(1) >= ... >= L^(T) = L_RD, and every L^(K) >= L_RD.

    The reported error is the largest violation (0 when the chain holds).
    """
    worst = 0.0
    for i in range(instance_count):
        _, model, batch = random_instance(rng, ("tabular", "linear", "mlp")[i % 3])
        T = batch[0].length
        base = rd.loss_rd(model, batch).total
        chain = [rd.loss_rand_rd(model, batch, K, mode="exact").total for K in range(1, T + 1)]
        for a, b in zip(chain, chain[1:]):
            worst = max(worst, b - a)
        worst = max(worst, abs(chain[-1] - base), *(base - v for v in chain))
    return VerificationCertificate.from_errors("proposition_chain", instance_count, worst, slack)


def verify_gradients(instance_count: int, rng: RngStream, tol: float = 1e-4,
                     kinds=("tabular", "linear", "mlp")) -> VerificationCertificate:
    """Analytic sampled-loss gradients against central differences, index sets frozen."""
    worst = 0.0
    for i in range(instance_count):
        _, model, batch = random_instance(rng, kinds[i % len(kinds)])
        K = int(rng.integers(1, batch[0].length + 1))
        sets = rd.sample_index_sets(batch, K, rng)
        _, g = rd.rand_rd_loss_and_grad(model, batch, sets)
        fd = finite_difference_grad(
            model, lambda m: rd.loss_rand_rd(m, batch, K, mode="sampled", index_sets=sets).total)
        worst = max(worst, float(relative_error(g, fd).max()))
    return VerificationCertificate.from_errors("gradient_finite_difference", instance_count, worst, tol)


SUITES = {
    "theorem1": lambda n, rng: [verify_theorem1(n, rng), verify_unbiased_rd(n, rng), verify_sampler(rng)],
    "propositions": lambda n, rng: [verify_proposition_chain(n, rng)],
    "gradients": lambda n, rng: [verify_gradients(n, rng)],
}


def run_suite(name: str, n: int, rng: RngStream) -> list[VerificationCertificate]:
    if name == "all":
        return [c for key in ("theorem1", "propositions", "gradients") for c in SUITES[key](n, rng)]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}")
    return SUITES[name](n, rng)
