"""Return decomposition objectives and uniform reward redistribution.

Notation used throughout: a trajectory has length ``T`` and episodic return
``R``; ``r_t`` is the proxy reward of step ``t``; a subsequence ``I`` is a set
of ``K`` distinct step indices drawn uniformly among all ``C(T, K)`` subsets.

* Return decomposition loss: ``mean_j (R_j - sum_t r_t)^2``.
* Randomized loss: ``mean_j E_I (R_j - (T_j/K) sum_{t in I} r_t)^2``, equal to
  the return decomposition loss plus the variance of the scaled subset sum.
* That variance has the closed form ``T^2 * popvar(r) * w(K, T)`` with
  interpolation weight ``w(K, T) = (1/K) (1 - (K-1)/(T-1))``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .core import ActionId, ReplayBuffer, RngStream, StateId, Trajectory
from .reward_model import RewardModel, evaluate, reward_vjp

EXACT_MAX_T = 16
DEFAULT_K = 64
DEFAULT_M = 4


class NoSupportError(KeyError):
    """Raised when a (state, action) pair was never observed in the buffer."""


@dataclass(frozen=True)
class SubsequenceIndexSet:
    indices: tuple
    horizon: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx or len(idx) > self.horizon:
            raise ValueError("need 1 <= K <= T indices")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.horizon:
            raise ValueError("indices must lie in [0, T)")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return len(self.indices)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class LossReport:
    total: float
    rd_component: Optional[float] = None
    variance_component: Optional[float] = None

    def to_dict(self) -> dict:
        return {"total": self.total, "rd": self.rd_component, "var": self.variance_component}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class MiniBatchSpec:
    n_subsequences: int = DEFAULT_M
    subsequence_length: int = DEFAULT_K

    def __post_init__(self):
        if self.n_subsequences < 1 or self.subsequence_length < 1:
            raise ValueError("M and K must be >= 1")


def clamp_k(K: int, T: int) -> int:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return min(K, T)


def sample_subsequence(T: int, K: int, rng: RngStream) -> SubsequenceIndexSet:
    """Uniformly random K-subset of ``range(T)``; K larger than T is clamped."""
    K = clamp_k(K, T)
    if K == T:
        return SubsequenceIndexSet(tuple(range(T)), T)
    idx = np.sort(rng.choice(T, size=K, replace=False))
    return SubsequenceIndexSet(tuple(idx.tolist()), T)


def sample_index_sets(batch: Sequence[Trajectory], K: int, rng: RngStream,
                      per_trajectory: int = 1) -> list[list[SubsequenceIndexSet]]:
    """Index sets for a batch, ``per_trajectory`` independent draws each."""
    # Module-level lookup so that verification can swap in a different sampler.
    return [[sample_subsequence(traj.length, K, rng) for _ in range(per_trajectory)]
            for traj in batch]


def proxy_rewards(model: RewardModel, trajectory: Trajectory) -> np.ndarray:
    return evaluate(model, trajectory.states, trajectory.actions)


def _check_horizon(trajectory: Trajectory, idx: SubsequenceIndexSet) -> None:
    if idx.horizon != trajectory.length:
        raise ValueError(f"index set horizon {idx.horizon} != trajectory length {trajectory.length}")


def mc_return_estimate(model: RewardModel, trajectory: Trajectory, idx: SubsequenceIndexSet) -> float:
    """Scaled subset sum ``(T/K) * sum_{t in I} r_t``."""
    _check_horizon(trajectory, idx)
    r = proxy_rewards(model, trajectory)
    return trajectory.length / idx.size * float(r[list(idx.indices)].sum())


def loss_rd(model: RewardModel, batch: Sequence[Trajectory]) -> LossReport:
    """Full-trajectory return decomposition loss."""
    if not batch:
        raise ValueError("batch must be non-empty")
    res = [traj.episodic_return - float(proxy_rewards(model, traj).sum()) for traj in batch]
    value = float(np.mean(np.square(res)))
    return LossReport(value, rd_component=value)


def interpolation_weight(K: int, T: int) -> float:
    """``(1/K) * (1 - (K-1)/(T-1))``; 0 for single-step trajectories."""
    K = clamp_k(K, T)
    if T == 1:
        return 0.0
    return (1.0 / K) * (1.0 - (K - 1) / (T - 1))


def _subset_estimates(r: np.ndarray, K: int) -> np.ndarray:
    T = r.size
    if T > EXACT_MAX_T:
        raise ValueError(f"exact enumeration limited to T <= {EXACT_MAX_T}, got {T}")
    subsets = np.array(list(combinations(range(T), K)), dtype=np.int64)
    return T / K * r[subsets].sum(axis=1)


def variance_penalty(model: RewardModel, trajectory: Trajectory, K: int,
                     mode: str = "formula") -> float:
    """Variance of the scaled subset-sum estimator over uniform K-subsets.

    ``mode="exact"`` enumerates every subset (T <= 16); ``mode="formula"``
    uses ``T^2 * popvar(r) * interpolation_weight(K, T)``.
    """
    r = proxy_rewards(model, trajectory)
    T = r.size
    K = clamp_k(K, T)
    if mode == "exact":
        est = _subset_estimates(r, K)
        mean = math.fsum(est) / est.size
        return math.fsum((est - mean) ** 2) / est.size
    if mode == "formula":
        return T * T * float(np.var(r)) * interpolation_weight(K, T)
    raise ValueError(f"mode must be 'exact' or 'formula', got {mode!r}")


def loss_rand_rd(model: RewardModel, batch: Sequence[Trajectory], K: int,
                 rng: Optional[RngStream] = None, mode: str = "sampled",
                 index_sets: Optional[list] = None) -> LossReport:
    """Randomized return decomposition loss.

    Modes
    -----
    sampled
        Mini-batch estimate with one random index set per trajectory (or the
        given ``index_sets``, a list per trajectory). Only ``total`` is set.
    exact
        True expectation over all subsets by enumeration (T <= 16). The
        report also carries the return decomposition and variance parts.
    closed_form
        Same expectation via the interpolation-weight formula; any T.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    if mode == "sampled":
        if index_sets is None:
            if rng is None:
                raise ValueError("sampled mode needs an rng or explicit index sets")
            index_sets = sample_index_sets(batch, K, rng)
        terms = []
        for traj, sets in zip(batch, index_sets):
            r = proxy_rewards(model, traj)
            for idx in sets:
                _check_horizon(traj, idx)
                est = traj.length / idx.size * r[list(idx.indices)].sum()
                terms.append((traj.episodic_return - est) ** 2 / len(sets))
        return LossReport(float(np.sum(terms)) / len(batch))
    if mode == "exact":
        totals, variances = [], []
        for traj in batch:
            r = proxy_rewards(model, traj)
            est = _subset_estimates(r, clamp_k(K, r.size))
            totals.append(math.fsum((traj.episodic_return - est) ** 2) / est.size)
            variances.append(variance_penalty(model, traj, K, mode="exact"))
        rd = loss_rd(model, batch).total
        return LossReport(math.fsum(totals) / len(batch), rd, math.fsum(variances) / len(batch))
    if mode == "closed_form":
        rd = loss_rd(model, batch).total
        var = float(np.mean([variance_penalty(model, traj, K) for traj in batch]))
        return LossReport(rd + var, rd, var)
    raise ValueError(f"mode must be 'sampled', 'exact' or 'closed_form', got {mode!r}")


def _vjp_batch(model: RewardModel, states: list, actions: list, weights: list) -> np.ndarray:
    if not states:
        return np.zeros(model.n_params)
    return reward_vjp(model, np.concatenate(states), np.concatenate(actions), np.concatenate(weights))


def rand_rd_loss_and_grad(model: RewardModel, batch: Sequence[Trajectory], index_sets: list):
    """Sampled randomized loss and its exact gradient for fixed index sets."""
    n = len(batch)
    loss = 0.0
    states, actions, weights = [], [], []
    for traj, sets in zip(batch, index_sets):
        r = proxy_rewards(model, traj)
        T = traj.length
        for idx in sets:
            _check_horizon(traj, idx)
            sel = np.asarray(idx.indices)
            scale = T / idx.size
            residual = traj.episodic_return - scale * r[sel].sum()
            loss += residual ** 2 / (n * len(sets))
            states.append(traj.states[sel])
            actions.append(traj.actions[sel])
            weights.append(np.full(sel.size, -2.0 * residual * scale / (n * len(sets))))
    return float(loss), _vjp_batch(model, states, actions, weights)


def loss_rand_rd_grad(model: RewardModel, batch: Sequence[Trajectory], K: int,
                      rng: Optional[RngStream] = None,
                      index_sets: Optional[list] = None) -> np.ndarray:
    """Gradient of the sampled randomized loss, index sets held fixed."""
    if index_sets is None:
        index_sets = sample_index_sets(batch, K, rng)
    return rand_rd_loss_and_grad(model, batch, index_sets)[1]


def expected_rand_rd_loss_and_grad(model: RewardModel, batch: Sequence[Trajectory], K: int):
    """Closed-form expected randomized loss over all subsets and its gradient.

    Uses ``d/dr_t [(R - sum r)^2] = -2 (R - sum r)`` and
    ``d/dr_t [T^2 w popvar(r)] = 2 T w (r_t - mean r)``.
    """
    n = len(batch)
    loss = 0.0
    states, actions, weights = [], [], []
    for traj in batch:
        r = proxy_rewards(model, traj)
        T = r.size
        w = interpolation_weight(K, T)
        residual = traj.episodic_return - r.sum()
        loss += (residual ** 2 + T * T * w * np.var(r)) / n
        states.append(traj.states)
        actions.append(traj.actions)
        weights.append((-2.0 * residual + 2.0 * T * w * (r - r.mean())) / n)
    return float(loss), _vjp_batch(model, states, actions, weights)


def _unbiased_coef(T: int, K: int) -> float:
    # T (T - K) / (K (K - 1)); zero when the subset is the whole trajectory
    if K >= T:
        return 0.0
    return T * (T - K) / (K * (K - 1))


def unbiased_penalty_estimate(r_subset: np.ndarray, T: int) -> float:
    """Unbiased estimate of the subset-sum variance from one sampled subset.

    ``T^2 * ((T-K)/T) * sum_I (r - mean_I r)^2 / (K (K-1))``, i.e. the
    finite-population variance estimator for sampling without replacement.
    """
    K = r_subset.size
    if K < 2:
        if K == T:
            return 0.0
        raise ValueError("the unbiased variance estimate needs K >= 2")
    dev = r_subset - r_subset.mean()
    return _unbiased_coef(T, K) * float(dev @ dev)


def rd_unbiased_loss_and_grad(model: RewardModel, batch: Sequence[Trajectory], index_sets: list):
    """Sampled randomized loss minus the unbiased variance estimate, with gradient."""
    n = len(batch)
    loss = 0.0
    states, actions, weights = [], [], []
    for traj, sets in zip(batch, index_sets):
        r = proxy_rewards(model, traj)
        T = traj.length
        for idx in sets:
            _check_horizon(traj, idx)
            sel = np.asarray(idx.indices)
            rs = r[sel]
            K = sel.size
            scale = T / K
            residual = traj.episodic_return - scale * rs.sum()
            penalty = unbiased_penalty_estimate(rs, T)
            m = n * len(sets)
            loss += (residual ** 2 - penalty) / m
            coef = _unbiased_coef(T, K)
            states.append(traj.states[sel])
            actions.append(traj.actions[sel])
            weights.append((-2.0 * residual * scale - 2.0 * coef * (rs - rs.mean())) / m)
    return float(loss), _vjp_batch(model, states, actions, weights)


def loss_rd_unbiased(model: RewardModel, batch: Sequence[Trajectory], K: int,
                     rng: Optional[RngStream] = None,
                     index_sets: Optional[list] = None) -> LossReport:
    """Unbiased mini-batch estimate of the full return decomposition loss."""
    if K < 2:
        raise ValueError("the unbiased estimator needs K >= 2")
    if not batch:
        raise ValueError("batch must be non-empty")
    if index_sets is None:
        if rng is None:
            raise ValueError("need an rng or explicit index sets")
        index_sets = sample_index_sets(batch, K, rng)
    return LossReport(rd_unbiased_loss_and_grad(model, batch, index_sets)[0])


def _containing(buffer, s: StateId, a: ActionId) -> list[Trajectory]:
    found = [traj for traj in buffer
             if np.any((traj.states == s) & (traj.actions == a))]
    if not found:
        raise NoSupportError(f"(s={s}, a={a}) never observed in the buffer")
    return found


def ircr_proxy(buffer, s: StateId, a: ActionId, scaled: bool = False) -> float:
    """Mean episodic return (optionally divided by length) of trajectories containing (s, a).

    A trajectory that visits the pair several times counts once.
    """
    trajs = _containing(buffer, s, a)
    if scaled:
        return float(np.mean([t.episodic_return / t.length for t in trajs]))
    return float(np.mean([t.episodic_return for t in trajs]))


def uniform_fixed_point_weighted(buffer, s: StateId, a: ActionId) -> float:
    """Length-weighted uniform redistribution ``sum T R / sum T^2`` over containing trajectories."""
    trajs = _containing(buffer, s, a)
    num = math.fsum(t.length * t.episodic_return for t in trajs)
    den = math.fsum(t.length ** 2 for t in trajs)
    return num / den


def ircr_table(buffer, state_count: int, action_count: int, scaled: bool = False):
    """IRCR proxy for every pair at once; returns ``(table, visited_mask)``.

    Unvisited pairs get 0.
    """
    total = np.zeros((state_count, action_count))
    count = np.zeros((state_count, action_count))
    for traj in buffer:
        value = traj.episodic_return / traj.length if scaled else traj.episodic_return
        hit = np.zeros((state_count, action_count), dtype=bool)
        hit[traj.states, traj.actions] = True
        total[hit] += value
        count[hit] += 1
    visited = count > 0
    table = np.divide(total, count, out=np.zeros_like(total), where=visited)
    return table, visited
