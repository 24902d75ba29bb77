"""Policy optimization on learned proxy rewards with tabular Q-learning.

Each episode: roll out the epsilon-greedy policy, store the trajectory, take a
few gradient steps on the reward model, then run Q-learning on the newest
trajectory and on a uniform sample of buffered transitions, using proxy
rewards computed from the current reward model.

Reward learning only ever sees trajectories and their episodic returns. The
hidden reward table is read for the ``oracle_dense`` skyline and for the
proxy/truth correlation that is logged at evaluation points.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from . import redistribution as rd
from .core import ReplayBuffer, RngStream, StateId, Trajectory
from .envs import EpisodicFeedbackEnv, rollout
from .reward_model import DEFAULT_ADAM_LR, SGD, Adam, RewardModel, evaluate, init_params

OBJECTIVES = ("rand_rd", "rd_unbiased", "ircr", "uniform_scaled", "oracle_dense")
DEFAULT_GAMMA = 0.99
CSV_HEADER = ("episode", "true_return", "loss_total", "loss_rd", "loss_var", "corr")


class ConfigError(ValueError):
    """Invalid trainer or experiment configuration; the message names the field."""


@dataclass
class TrainerConfig:
    objective: str = "rand_rd"
    K: int = rd.DEFAULT_K
    M: int = rd.DEFAULT_M
    reward_lr: float = DEFAULT_ADAM_LR
    reward_steps_per_episode: int = 4
    q_lr: float = 0.2
    gamma: float = DEFAULT_GAMMA
    epsilon_schedule: tuple = (1.0, 0.1, 300)
    buffer_capacity: int = 10**6
    total_episodes: int = 800
    seed: int = 0
    reward_model: str = "tabular"
    optimizer: str = "sgd"
    hidden: tuple = (32, 32)
    activation: str = "tanh"
    subsequences_per_trajectory: int = 1
    q_replay_transitions: int = 256
    eval_every: int = 50
    eval_episodes: int = 20

    def __post_init__(self):
        self.epsilon_schedule = tuple(self.epsilon_schedule)
        self.hidden = tuple(self.hidden)
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        if self.objective not in OBJECTIVES:
            bad("objective", f"must be one of {OBJECTIVES}")
        for name in ("K", "M", "reward_steps_per_episode", "buffer_capacity",
                     "subsequences_per_trajectory", "eval_every", "eval_episodes"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                bad(name, "must be a positive integer")
        for name in ("total_episodes", "q_replay_transitions", "seed"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 0:
                bad(name, "must be a non-negative integer")
        for name in ("reward_lr", "q_lr"):
            if not getattr(self, name) > 0:
                bad(name, "must be positive")
        if not 0 < self.gamma <= 1:
            bad("gamma", f"must lie in (0, 1], got {self.gamma}")
        if len(self.epsilon_schedule) != 3:
            bad("epsilon_schedule", "must be (start, end, decay_steps)")
        start, end, steps = self.epsilon_schedule
        if not (0 <= start <= 1 and 0 <= end <= 1) or steps < 0:
            bad("epsilon_schedule", "start/end must lie in [0, 1] and decay_steps >= 0")
        if self.objective == "rd_unbiased" and self.K < 2:
            bad("K", "rd_unbiased needs K >= 2")
        if self.reward_model not in ("tabular", "linear", "mlp"):
            bad("reward_model", "must be tabular, linear or mlp")
        if self.optimizer not in ("sgd", "adam"):
            bad("optimizer", "must be sgd or adam")
        if self.activation not in ("tanh", "relu"):
            bad("activation", "must be tanh or relu")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown trainer key")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["epsilon_schedule"] = list(self.epsilon_schedule)
        out["hidden"] = list(self.hidden)
        return out


@dataclass
class Policy:
    """Epsilon-greedy policy over a Q table; greedy ties go to the lowest action."""

    q_table: np.ndarray
    epsilon: float = 0.0

    def greedy(self, s: StateId) -> int:
        return int(np.argmax(self.q_table[s]))

    def __call__(self, s: StateId, rng: RngStream) -> int:
        if self.epsilon > 0 and rng.random() < self.epsilon:
            return int(rng.integers(self.q_table.shape[1]))
        return self.greedy(s)


@dataclass
class EvalRecord:
    episode: int
    true_return: float
    loss_total: Optional[float]
    loss_rd: Optional[float]
    loss_var: Optional[float]
    corr: Optional[float]


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    policy: Optional[Policy] = field(default=None, repr=False)
    reward_model: Optional[RewardModel] = field(default=None, repr=False)

    def append(self, record: EvalRecord) -> None:
        if self.records and record.episode <= self.records[-1].episode:
            raise ValueError("evaluation records must be strictly increasing in episode")
        self.records.append(record)

    @property
    def final_return(self) -> Optional[float]:
        return self.records[-1].true_return if self.records else None

    @property
    def final_corr(self) -> Optional[float]:
        return self.records[-1].corr if self.records else None

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in self.records:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v
                             for v in (rec.episode, rec.true_return, rec.loss_total,
                                       rec.loss_rd, rec.loss_var, rec.corr)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        atomic_write(path, self.to_csv_string())


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temp file in the target directory, then rename it into place."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def epsilon_at(schedule, episode: int) -> float:
    start, end, steps = schedule
    if steps <= 0 or episode >= steps:
        return float(end)
    return float(start + (end - start) * episode / steps)


def evaluate_policy(env: EpisodicFeedbackEnv, policy: Policy, n_episodes: int, rng: RngStream) -> float:
    """Mean true episodic return of the greedy version of ``policy``."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    greedy = Policy(policy.q_table, 0.0)
    return float(np.mean([rollout(env, greedy, rng).episodic_return for _ in range(n_episodes)]))


def proxy_truth_correlation(model: RewardModel, env: EpisodicFeedbackEnv,
                            trajectories: Sequence[Trajectory]) -> float:
    """Pearson correlation of proxy and hidden rewards over every visited step."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    s = np.concatenate([t.states for t in trajectories])
    a = np.concatenate([t.actions for t in trajectories])
    x = evaluate(model, s, a)
    y = env.mdp.hidden_reward_table[s, a]
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("correlation undefined: zero variance in proxy or hidden rewards")
    return float(np.corrcoef(x, y)[0, 1])


def reward_update(model: RewardModel, optimizer, buffer: ReplayBuffer,
                  config: TrainerConfig, rng: RngStream) -> RewardModel:
    """One mini-batch gradient step on the configured parametric objective.

    Only trajectories and episodic returns from ``buffer`` are consulted.
    """
    batch = buffer.sample_trajectories(config.M, rng)
    sets = rd.sample_index_sets(batch, config.K, rng, config.subsequences_per_trajectory)
    if config.objective == "rand_rd":
        _, grad = rd.rand_rd_loss_and_grad(model, batch, sets)
    else:
        _, grad = rd.rd_unbiased_loss_and_grad(model, batch, sets)
    return optimizer.step(model, grad)


def _q_update(q: np.ndarray, s, a, r, s2, terminal: bool, lr: float, gamma: float) -> None:
    target = r if terminal else r + gamma * q[s2].max()
    q[s, a] += lr * (target - q[s, a])


def train(env: EpisodicFeedbackEnv, config: TrainerConfig) -> RunLog:
    """Run the collect / redistribute / Q-learn loop and log evaluation points.

    Evaluation happens every ``eval_every`` episodes and after the last one.
    """
    config.validate()
    S, A = env.state_count, env.action_count
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    roll_rng, reward_rng, q_rng, eval_rng = (np.random.Generator(np.random.PCG64(s)) for s in seeds)

    parametric = config.objective in ("rand_rd", "rd_unbiased")
    model = init_params(config.reward_model,
                        {"state_count": S, "action_count": A, "hidden": config.hidden,
                         "activation": config.activation},
                        reward_rng)
    if config.optimizer == "adam":
        optimizer = Adam(config.reward_lr)
    else:
        optimizer = SGD(config.reward_lr)

    buffer = ReplayBuffer(config.buffer_capacity)
    q = np.zeros((S, A))
    policy = Policy(q, epsilon_at(config.epsilon_schedule, 0))
    log = RunLog(policy=policy)
    terminal = env.mdp.terminal_mask

    for episode in range(config.total_episodes):
        policy.epsilon = epsilon_at(config.epsilon_schedule, episode)
        traj = rollout(env, policy, roll_rng)
        buffer.push(traj)

        if parametric:
            for _ in range(config.reward_steps_per_episode):
                model = reward_update(model, optimizer, buffer, config, reward_rng)
            proxy = model.table()
        elif config.objective == "oracle_dense":
            proxy = env.mdp.hidden_reward_table
        else:
            proxy, _ = rd.ircr_table(buffer, S, A, scaled=config.objective == "uniform_scaled")

        for tr in reversed(traj.transitions):
            _q_update(q, tr.state, tr.action, proxy[tr.state, tr.action], tr.next_state,
                      terminal[tr.next_state], config.q_lr, config.gamma)
        if config.q_replay_transitions:
            bs = np.concatenate([t.states for t in buffer])
            ba = np.concatenate([t.actions for t in buffer])
            bn = np.concatenate([t.next_states for t in buffer])
            pick = q_rng.integers(0, bs.size, size=config.q_replay_transitions)
            for s, a, s2 in zip(bs[pick].tolist(), ba[pick].tolist(), bn[pick].tolist()):
                _q_update(q, s, a, proxy[s, a], s2, terminal[s2], config.q_lr, config.gamma)

        done = episode + 1
        if done % config.eval_every == 0 or done == config.total_episodes:
            proxy_model = model if parametric else RewardModel("tabular", np.asarray(proxy).ravel(), S, A)
            log.append(_evaluation_record(env, policy, proxy_model, buffer, config, eval_rng, done))

    log.policy = policy
    log.reward_model = model if parametric else None
    return log


def _evaluation_record(env, policy, proxy_model, buffer, config, rng, episode) -> EvalRecord:
    true_return = evaluate_policy(env, policy, config.eval_episodes, rng)
    trajs = list(buffer)
    report = rd.loss_rand_rd(proxy_model, trajs, config.K, mode="closed_form")
    try:
        corr = proxy_truth_correlation(proxy_model, env, trajs)
    except ValueError:
        corr = None
    return EvalRecord(episode, true_return, report.total, report.rd_component,
                      report.variance_component, corr)
