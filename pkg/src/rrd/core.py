"""Shared domain types: transitions, trajectories, the replay buffer and RNG streams.

States and actions are plain integer indices into a discrete environment.
Random streams are numpy ``Generator`` objects backed by PCG64, which gives
identical draw sequences for identical seeds on every platform numpy supports.
"""

from __future__ import annotations

import json
from collections import deque
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

StateId = int
ActionId = int
RngStream = np.random.Generator


def make_rng(seed: int) -> RngStream:
    """Return a PCG64 generator for ``seed`` (any non-negative 64-bit integer)."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


class Transition(NamedTuple):
    state: StateId
    action: ActionId
    next_state: StateId
    timestep: int


class Trajectory:
    """An immutable state-action sequence with its episodic return.

    Parameters
    ----------
    transitions : sequence of Transition or (s, a, s') triples
        Ordered steps of the episode. Timesteps are assigned from position
        when triples are given.
    episodic_return : float
        The single feedback value revealed at the end of the episode.
    """

    __slots__ = ("transitions", "episodic_return", "states", "actions", "next_states")

    def __init__(self, transitions: Sequence, episodic_return: float):
        steps = []
        for t, tr in enumerate(transitions):
            if isinstance(tr, Transition):
                if tr.timestep != t:
                    raise ValueError(f"transition {t} carries timestep {tr.timestep}")
                steps.append(tr)
            else:
                s, a, s_next = tr
                steps.append(Transition(int(s), int(a), int(s_next), t))
        if not steps:
            raise ValueError("a trajectory needs at least one transition")
        for t in range(len(steps) - 1):
            if steps[t].next_state != steps[t + 1].state:
                raise ValueError(
                    f"transitions do not chain at t={t}: "
                    f"next_state {steps[t].next_state} != state {steps[t + 1].state}"
                )
        for tr in steps:
            if min(tr.state, tr.action, tr.next_state) < 0:
                raise ValueError("state and action indices must be non-negative")
        object.__setattr__(self, "transitions", tuple(steps))
        object.__setattr__(self, "episodic_return", float(episodic_return))
        states = np.array([tr.state for tr in steps], dtype=np.int64)
        actions = np.array([tr.action for tr in steps], dtype=np.int64)
        next_states = np.array([tr.next_state for tr in steps], dtype=np.int64)
        for arr in (states, actions, next_states):
            arr.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "next_states", next_states)

    def __setattr__(self, name, value):
        raise AttributeError("Trajectory is immutable")

    @property
    def length(self) -> int:
        return len(self.transitions)

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.transitions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.transitions == other.transitions
            and self.episodic_return == other.episodic_return
        )

    def __hash__(self) -> int:
        return hash((self.transitions, self.episodic_return))

    def __repr__(self) -> str:
        return f"Trajectory(length={self.length}, episodic_return={self.episodic_return!r})"

    def pairs(self) -> set[tuple[StateId, ActionId]]:
        """Distinct (state, action) pairs visited anywhere in the episode."""
        return set(zip(self.states.tolist(), self.actions.tolist()))

    def to_dict(self) -> dict:
        return {
            "transitions": [[tr.state, tr.action, tr.next_state] for tr in self.transitions],
            "episodic_return": self.episodic_return,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        if set(data) != {"transitions", "episodic_return"}:
            raise ValueError(f"unexpected trajectory keys: {sorted(data)}")
        return cls([tuple(step) for step in data["transitions"]], data["episodic_return"])


def trajectory_to_json(traj: Trajectory) -> str:
    return json.dumps(traj.to_dict())


def trajectory_from_json(text: str) -> Trajectory:
    return Trajectory.from_dict(json.loads(text))


def dump_trajectories(trajs: Iterable[Trajectory], path) -> None:
    """Write one JSON trajectory object per line."""
    with open(path, "w") as fh:
        for traj in trajs:
            fh.write(trajectory_to_json(traj) + "\n")


def load_trajectories(path) -> list[Trajectory]:
    with open(path) as fh:
        return [trajectory_from_json(line) for line in fh if line.strip()]


class ReplayBuffer:
    """FIFO store of whole trajectories with a capacity counted in transitions.

    Pushing evicts the oldest trajectories until the stored transition count
    fits the capacity. The trajectory just pushed is never evicted, so a
    single trajectory longer than the capacity is kept on its own.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be a positive number of transitions")
        self.capacity = int(capacity)
        self.entries: deque[Trajectory] = deque()
        self.transition_count = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.entries)

    def __getitem__(self, i: int) -> Trajectory:
        return self.entries[i]

    def push(self, trajectory: Trajectory) -> "ReplayBuffer":
        if not isinstance(trajectory, Trajectory) or trajectory.length == 0:
            raise ValueError("only non-empty trajectories can be stored")
        self.entries.append(trajectory)
        self.transition_count += trajectory.length
        while self.transition_count > self.capacity and len(self.entries) > 1:
            old = self.entries.popleft()
            self.transition_count -= old.length
        return self

    def sample_trajectories(self, count: int, rng: RngStream) -> list[Trajectory]:
        """Draw ``count`` trajectories uniformly with replacement."""
        if not self.entries:
            raise ValueError("cannot sample from an empty replay buffer")
        if count < 1:
            raise ValueError("count must be at least 1")
        idx = rng.integers(0, len(self.entries), size=count)
        return [self.entries[i] for i in idx]


def buffer_push(buffer: ReplayBuffer, trajectory: Trajectory) -> ReplayBuffer:
    return buffer.push(trajectory)


def buffer_sample_trajectories(buffer: ReplayBuffer, count: int, rng: RngStream) -> list[Trajectory]:
    return buffer.sample_trajectories(count, rng)
