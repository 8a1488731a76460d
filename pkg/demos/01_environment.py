"""Walk through the grid environment: hidden road costs, a scenario, and one episode.

Run:  python demos/01_environment.py
"""

import numpy as np

from ridemix.grid_world import (
    build_map,
    dump_scenario,
    manhattan,
    sample_scenario,
    simulate_episode,
    traverse_time,
)
from ridemix.policies import greedy_policy, random_policy

# A 6x6 map. Every road gets a random integer cost in [1, 10]; dispatchers never see it.
grid = build_map(6, 6, cost_low=1, cost_high=10, seed=3)
print(f"{grid.width}x{grid.height} map with {grid.n_edges} roads")
print("horizontal road costs (row y, road from x to x+1):")
print(grid.h_costs.T)

# Distance as the greedy dispatcher sees it versus the time a car actually needs.
a, b = (0, 0), (5, 5)
print(f"\nManhattan {a}->{b}: {manhattan(a, b)} blocks")
print(f"x-then-y drive time: {traverse_time(grid, a, b)}")
print(f"fastest route time:  {traverse_time(grid, a, b, 'min-time')}")

# Three passengers, two cars. Passengers are served first-come-first-serve.
scenario = sample_scenario(grid, n_passengers=3, n_cars=2, seed=11)
print("\n" + dump_scenario(scenario).split("ridemix-scenario 1\n")[1])

for name, assignment in [
    ("greedy", greedy_policy(scenario)),
    ("random", random_policy(scenario, seed=0)),
]:
    result = simulate_episode(scenario, assignment)
    print(
        f"{name:>6}: cars {assignment}  waits {result.per_passenger_wait}  "
        f"duration {result.duration}  global reward {result.global_reward}"
    )

# Greedy ignores road costs and never spreads riders out, so with more
# passengers than cars it often loses to random assignment.
durations = {"greedy": [], "random": []}
rng = np.random.default_rng(0)
for _ in range(2000):
    g = build_map(20, 20, seed=rng)
    s = sample_scenario(g, 7, 2, seed=rng)
    durations["greedy"].append(simulate_episode(s, greedy_policy(s)).duration)
    durations["random"].append(simulate_episode(s, random_policy(s, rng)).duration)
print({k: round(float(np.mean(v)), 1) for k, v in durations.items()}, "(20x20, P=7, C=2)")
