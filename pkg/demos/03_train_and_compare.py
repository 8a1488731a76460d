"""Train IDQN and QMIX on a 10x10 map (P=4, C=2) and compare against the baselines.

Takes a minute or two on one CPU core.

Run:  python demos/03_train_and_compare.py [episodes]
"""

import sys

import numpy as np

from ridemix.exp_runner import AgentConfig, MapSpec, improvements, run_eval
from ridemix.policies import GreedyPolicy, LearnedPolicy, RandomPolicy
from ridemix.training import TrainConfig, train

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000
config = TrainConfig(episodes=episodes, width=10, height=10, p=4, c=2, seed=0)

policies = [RandomPolicy(), GreedyPolicy()]
for algo in ("idqn", "qmix"):
    result = train(algo, config)
    losses = np.array([p.loss for p in result.curve])
    print(f"{algo}: loss first 1000 {np.nanmean(losses[:1000]):.2f}, last 1000 {np.nanmean(losses[-1000:]):.2f}")
    policies.append(LearnedPolicy(result.model))

reports = [run_eval(p, MapSpec(10, 10), AgentConfig(4, 2), n=1000, seed=7) for p in policies]
for r in reports:
    print(f"{r.method:>7}: mean duration {r.mean:7.2f} +- {r.stderr:.2f}")
for imp in improvements(reports, baselines=("greedy", "random")):
    if imp.method in ("idqn", "qmix"):
        print(f"{imp.method} is {imp.pct:.1f}% faster than {imp.baseline}")

# The same 10x10 QMIX model on other map sizes: coordinates are normalised per map.
for size in (5, 50):
    spec = MapSpec(size, size)
    q = run_eval(policies[-1], spec, AgentConfig(4, 2), n=500, seed=7)
    r = run_eval(RandomPolicy(), spec, AgentConfig(4, 2), n=500, seed=7)
    print(f"{size}x{size}: qmix {q.mean:.1f} vs random {r.mean:.1f}")
