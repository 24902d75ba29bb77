"""Discrete environments whose only reward signal is the episodic return.

Every environment carries a hidden per-step reward table. The agent observes
zero reward on every step except the last, where the sum of hidden rewards
along the realized path is revealed. This makes the sum-decomposable return
structure hold exactly, so learned proxy rewards can be scored against the
hidden table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ActionId, RngStream, StateId, Trajectory, make_rng

Policy = Callable[[StateId, RngStream], ActionId]


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with a hidden additive reward table.

    ``transition_table[s, a]`` is the next-state distribution and
    ``hidden_reward_table[s, a]`` the ground-truth per-step reward.
    """

    transition_table: np.ndarray
    hidden_reward_table: np.ndarray
    initial_distribution: np.ndarray
    horizon: int
    terminal_states: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        P = np.array(self.transition_table, dtype=float)
        R = np.array(self.hidden_reward_table, dtype=float)
        mu = np.array(self.initial_distribution, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition table must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if S < 1 or A < 1:
            raise ValueError("state_count and action_count must be positive")
        if R.shape != (S, A):
            raise ValueError(f"hidden reward table must have shape {(S, A)}, got {R.shape}")
        if mu.shape != (S,):
            raise ValueError(f"initial distribution must have shape {(S,)}, got {mu.shape}")
        if (P < 0).any() or np.abs(P.sum(axis=2) - 1.0).max() > 1e-12:
            raise ValueError("every transition row must be a probability vector")
        if (mu < 0).any() or abs(mu.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be positive")
        terminals = frozenset(int(s) for s in self.terminal_states)
        if any(not 0 <= s < S for s in terminals):
            raise ValueError("terminal states out of range")
        for arr in (P, R, mu):
            arr.setflags(write=False)
        object.__setattr__(self, "transition_table", P)
        object.__setattr__(self, "hidden_reward_table", R)
        object.__setattr__(self, "initial_distribution", mu)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "terminal_states", terminals)
        # Cumulative rows for inverse-CDF sampling; one uniform draw per step.
        cdf = np.cumsum(P, axis=2)
        cdf[..., -1] = 1.0
        object.__setattr__(self, "_cdf", cdf)
        mu_cdf = np.cumsum(mu)
        mu_cdf[-1] = 1.0
        object.__setattr__(self, "_mu_cdf", mu_cdf)
        is_terminal = np.zeros(S, dtype=bool)
        is_terminal[list(terminals)] = True
        object.__setattr__(self, "terminal_mask", is_terminal)

    @property
    def state_count(self) -> int:
        return self.transition_table.shape[0]

    @property
    def action_count(self) -> int:
        return self.transition_table.shape[1]

    def sample_initial(self, rng: RngStream) -> StateId:
        return int(np.searchsorted(self._mu_cdf, rng.random(), side="right"))

    def sample_next(self, s: StateId, a: ActionId, rng: RngStream) -> StateId:
        return int(np.searchsorted(self._cdf[s, a], rng.random(), side="right"))

    def to_dict(self) -> dict:
        return {
            "type": "tabular",
            "transition_table": self.transition_table.tolist(),
            "hidden_reward_table": self.hidden_reward_table.tolist(),
            "initial_distribution": self.initial_distribution.tolist(),
            "horizon": self.horizon,
            "terminal_states": sorted(self.terminal_states),
        }


class EpisodicFeedbackEnv:
    """Terminal-only reward reveal on top of a :class:`TabularMdp`."""

    reveal_mode = "terminal-only"

    def __init__(self, mdp: TabularMdp, name: str = "tabular"):
        self.mdp = mdp
        self.name = name

    @property
    def state_count(self) -> int:
        return self.mdp.state_count

    @property
    def action_count(self) -> int:
        return self.mdp.action_count

    @property
    def horizon(self) -> int:
        return self.mdp.horizon

    def is_terminal(self, s: StateId) -> bool:
        return bool(self.mdp.terminal_mask[s])

    def reset(self, rng: RngStream) -> StateId:
        return self.mdp.sample_initial(rng)

    def step(self, s: StateId, a: ActionId, t: int, hidden_sum: float, rng: RngStream):
        """Advance one step.

        Returns ``(next_state, observed_reward, done, hidden_sum)``. The
        observed reward is 0.0 unless ``done``, in which case it is the
        accumulated hidden return.
        """
        if not (0 <= a < self.action_count):
            raise ValueError(f"action {a} out of range")
        s_next = self.mdp.sample_next(s, a, rng)
        hidden_sum = hidden_sum + self.mdp.hidden_reward_table[s, a]
        done = self.is_terminal(s_next) or t + 1 >= self.horizon
        return s_next, (float(hidden_sum) if done else 0.0), done, hidden_sum

    def to_dict(self) -> dict:
        return self.mdp.to_dict()


def rollout(env: EpisodicFeedbackEnv, policy: Policy, rng: RngStream) -> Trajectory:
    """Run one episode with ``policy(state, rng) -> action``.

    The episode ends on reaching a terminal state or after ``horizon`` steps;
    truncation also reveals the feedback.
    """
    s = env.reset(rng)
    steps = []
    hidden = 0.0
    feedback = 0.0
    for t in range(env.horizon):
        a = int(policy(s, rng))
        s_next, feedback, done, hidden = env.step(s, a, t, hidden, rng)
        steps.append((s, a, s_next))
        s = s_next
        if done:
            break
    return Trajectory(steps, feedback)


def observed_rewards(env: EpisodicFeedbackEnv, trajectory: Trajectory) -> np.ndarray:
    """Per-step signal the agent sees for ``trajectory``: zeros, then the return."""
    out = np.zeros(trajectory.length)
    out[-1] = trajectory.episodic_return
    return out


def hidden_return(env: EpisodicFeedbackEnv, trajectory: Trajectory) -> float:
    """Re-sum the hidden rewards along a trajectory."""
    R = env.mdp.hidden_reward_table
    return float(sum(R[tr.state, tr.action] for tr in trajectory))


def make_chain_env(n_states: int, step_reward_right: float, step_reward_left: float,
                   horizon: int) -> EpisodicFeedbackEnv:
    """1-D chain starting at state 0; action 1 moves right, action 0 left.

    Moving left from state 0 stays put. The rightmost state is terminal.
    """
    if n_states < 2:
        raise ValueError("a chain needs at least 2 states")
    P = np.zeros((n_states, 2, n_states))
    R = np.zeros((n_states, 2))
    for s in range(n_states):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, min(s + 1, n_states - 1)] = 1.0
        R[s, 0] = step_reward_left
        R[s, 1] = step_reward_right
    mu = np.zeros(n_states)
    mu[0] = 1.0
    mdp = TabularMdp(P, R, mu, horizon, frozenset({n_states - 1}))
    return EpisodicFeedbackEnv(mdp, name="chain")


def make_random_additive_env(state_count: int, action_count: int, horizon: int,
                             rng: RngStream) -> EpisodicFeedbackEnv:
    """Random MDP: Dirichlet(1) transition rows, uniform[-1, 1] hidden rewards.

    The initial distribution is uniform and there are no terminal states, so
    every episode lasts exactly ``horizon`` steps.
    """
    if min(state_count, action_count, horizon) < 1:
        raise ValueError("state_count, action_count and horizon must be >= 1")
    P = rng.dirichlet(np.ones(state_count), size=(state_count, action_count))
    # Renormalize so rows sum to 1 to machine precision.
    P = P / P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(state_count, action_count))
    mu = np.full(state_count, 1.0 / state_count)
    return EpisodicFeedbackEnv(TabularMdp(P, R, mu, horizon), name="random")


KEY_BONUS = 0.5
DOOR_BONUS = 1.0
# up, right, down, left as (drow, dcol)
GRID_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


def make_keydoor_gridworld(width: int, height: int, horizon: int) -> EpisodicFeedbackEnv:
    """Grid with a key in the top-right corner and a door in the bottom-right.

    The agent starts top-left. State index is ``2 * (row * width + col) + key``.
    Entering the key cell without the key picks it up (+0.5). Entering the door
    cell while holding the key pays +1.0 and ends the episode; without the key
    the door is an ordinary cell. Moves into walls leave the agent in place.
    """
    if width < 2 or height < 2:
        raise ValueError("keydoor grid needs width, height >= 2")
    n_cells = width * height
    S = 2 * n_cells
    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4))
    key_cell = width - 1
    door_cell = (height - 1) * width + (width - 1)
    terminals = set()
    for cell in range(n_cells):
        row, col = divmod(cell, width)
        for key in (0, 1):
            s = 2 * cell + key
            for a, (dr, dc) in enumerate(GRID_MOVES):
                r2 = min(max(row + dr, 0), height - 1)
                c2 = min(max(col + dc, 0), width - 1)
                cell2 = r2 * width + c2
                key2 = key
                if cell2 == key_cell and not key:
                    key2 = 1
                    R[s, a] += KEY_BONUS
                if cell2 == door_cell and key2 and cell2 != cell:
                    R[s, a] += DOOR_BONUS
                P[s, a, 2 * cell2 + key2] = 1.0
    terminals.add(2 * door_cell + 1)
    # Terminal rows still need valid distributions; they are never stepped from.
    mu = np.zeros(S)
    mu[0] = 1.0
    mdp = TabularMdp(P, R, mu, horizon, frozenset(terminals))
    return EpisodicFeedbackEnv(mdp, name="keydoor")


ENV_SPEC_KEYS = {
    "chain": {"n_states", "step_reward_right", "step_reward_left", "horizon"},
    "random": {"state_count", "action_count", "horizon", "seed"},
    "keydoor": {"width", "height", "horizon"},
    "tabular": {"transition_table", "hidden_reward_table", "initial_distribution",
                "horizon", "terminal_states"},
}


def env_from_spec(spec: dict) -> EpisodicFeedbackEnv:
    """Build an environment from a JSON-style spec dict.

    ``{"type": "chain" | "random" | "keydoor" | "tabular", ...}``; unknown or
    missing keys raise ``ValueError``.
    """
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind not in ENV_SPEC_KEYS:
        raise ValueError(f"env type must be one of {sorted(ENV_SPEC_KEYS)}, got {kind!r}")
    expected = ENV_SPEC_KEYS[kind]
    if set(spec) != expected:
        extra, missing = set(spec) - expected, expected - set(spec)
        raise ValueError(f"bad {kind} env spec: unknown keys {sorted(extra)}, missing {sorted(missing)}")
    if kind == "chain":
        return make_chain_env(int(spec["n_states"]), float(spec["step_reward_right"]),
                              float(spec["step_reward_left"]), int(spec["horizon"]))
    if kind == "random":
        return make_random_additive_env(int(spec["state_count"]), int(spec["action_count"]),
                                        int(spec["horizon"]), make_rng(int(spec["seed"])))
    if kind == "keydoor":
        return make_keydoor_gridworld(int(spec["width"]), int(spec["height"]), int(spec["horizon"]))
    mdp = TabularMdp(np.asarray(spec["transition_table"], dtype=float),
                     np.asarray(spec["hidden_reward_table"], dtype=float),
                     np.asarray(spec["initial_distribution"], dtype=float),
                     int(spec["horizon"]), frozenset(spec["terminal_states"]))
    return EpisodicFeedbackEnv(mdp)


def dump_env(env: EpisodicFeedbackEnv, path) -> None:
    with open(path, "w") as fh:
        json.dump(env.to_dict(), fh)
