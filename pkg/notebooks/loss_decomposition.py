"""
Randomized return decomposition on a single trajectory
=======================================================

A four step trajectory whose proxy rewards are 1, 2, 3, 4 and whose episodic
return is 10. The full-length fit is perfect, so every bit of the randomized
loss comes from the variance of the subsequence estimator.
"""

import numpy as np

from rrd import Trajectory, RewardModel
from rrd import redistribution as rd
from rrd.oracle import enumerate_subsets

traj = Trajectory([(t, 0, t + 1) for t in range(4)], 10.0)
model = RewardModel("tabular", [1.0, 2.0, 3.0, 4.0, 0.0], 5, 1)

# every K = 2 subset gives an unbiased guess of the return
for idx in enumerate_subsets(4, 2):
    print(idx.indices, rd.mc_return_estimate(model, traj, idx))

# %%
# Loss as a function of K. The RD part is zero here, so the total is all variance.
for K in range(1, 5):
    rep = rd.loss_rand_rd(model, [traj], K, mode="exact")
    print(f"K={K}  total={rep.total:7.4f}  rd={rep.rd_component:.1f}  var={rep.variance_component:7.4f}"
          f"  weight={rd.interpolation_weight(K, 4):.4f}")

# %%
# The sampled loss is a noisy version of the same number
rng = np.random.default_rng(0)
draws = [rd.loss_rand_rd(model, [traj], 2, rng).total for _ in range(20000)]
print("mean of sampled losses:", np.mean(draws), "exact:", 20 / 3)
