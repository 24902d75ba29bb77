"""Reward redistribution for episodic reinforcement learning via randomized return decomposition."""

from .core import ReplayBuffer, Trajectory, Transition, make_rng
from .envs import (EpisodicFeedbackEnv, TabularMdp, env_from_spec, make_chain_env,
                   make_keydoor_gridworld, make_random_additive_env, rollout)
from .redistribution import (LossReport, NoSupportError, SubsequenceIndexSet, interpolation_weight,
                             ircr_proxy, loss_rand_rd, loss_rand_rd_grad, loss_rd, loss_rd_unbiased,
                             mc_return_estimate, sample_subsequence, uniform_fixed_point_weighted,
                             variance_penalty)
from .reward_model import RewardModel, init_params, reward_eval, reward_grad
from .trainer import Policy, RunLog, TrainerConfig, evaluate_policy, proxy_truth_correlation, train

__version__ = "0.1.0"
