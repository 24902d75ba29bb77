"""
Subsequence length at a fixed batch budget
==========================================

Eight transitions per reward-model batch, split either as eight single
steps or two length-four subsequences.
"""

import tempfile
from dataclasses import replace

from rrd.cli import load_experiment, sweep_k

exp = load_experiment("configs/chain10_sweep.json")
exp = replace(exp, repeat=5)

with tempfile.TemporaryDirectory() as out:
    rows = sweep_k(exp, [1, 2, 4, 8], budget=8, out_dir=out)

for row in rows:
    print(row)
