import numpy as np
import pytest

from rrd.core import Trajectory, make_rng
from rrd.reward_model import RewardModel


def walk(rewards, episodic_return):
    """Trajectory through states 0..T with action 0, plus a tabular model whose
    proxy reward at step t is ``rewards[t]``. Every step visits a distinct pair."""
    T = len(rewards)
    traj = Trajectory([(t, 0, t + 1) for t in range(T)], episodic_return)
    params = np.append(np.asarray(rewards, dtype=float), 0.0)
    return RewardModel("tabular", params, T + 1, 1), traj


@pytest.fixture
def walk1234():
    return walk([1.0, 2.0, 3.0, 4.0], 10.0)


@pytest.fixture
def rng():
    return make_rng(12345)
