"""The numerical core: dense nets, hand-written backprop, and the QMIX mixer.

Run:  python demos/02_networks_and_gradients.py
"""

import itertools

import numpy as np

from ridemix.grid_world import build_map, sample_scenario
from ridemix.obs_encoding import action_mask, encode_observation, joint_action_from_q
from ridemix.policies import QmixModel, mix_forward, mix_qtot, qmix_backward
from ridemix.tensor_core import DenseNet, huber, net_backward, net_forward

rng = np.random.default_rng(0)

# Backprop against central differences on a small relu/elu network.
net = DenseNet.create([4, 16, 3], ["relu", "elu"], rng)
x = rng.normal(size=4)
g = rng.normal(size=3)
_, cache = net_forward(net, x)
grads, dx = net_backward(net, cache, g)
h = 1e-5
numeric = np.array([(np.dot(net(x + h * e), g) - np.dot(net(x - h * e), g)) / (2 * h) for e in np.eye(4)])
print("d/dx analytic:", np.round(dx, 6))
print("d/dx numeric: ", np.round(numeric, 6))

print("\nHuber at -3, -0.5, 0, 0.5, 3:", [huber(v) for v in (-3, -0.5, 0, 0.5, 3)])

# The observation for a scenario with room for 4 passengers and 3 cars.
grid = build_map(10, 10, seed=1)
scenario = sample_scenario(grid, n_passengers=3, n_cars=2, seed=2)
obs = encode_observation(scenario, p_max=4, c_max=3)
print("\nobservation length", obs.size, "car block", obs[:9].round(3))

model = QmixModel.create(p_max=4, c_max=3, hidden=32, mixing_width=8, rng=rng)
q = model.q_values(obs)
mask = action_mask(scenario, 4, 3)
actions = joint_action_from_q(q, mask, scenario.n_passengers)
print("per-passenger greedy cars:", actions)

# Mixing weights are non-negative, so raising any passenger's Q never lowers Q_tot.
chosen = np.zeros(4)
chosen[:3] = q[np.arange(3), actions]
q_tot, mcache = mix_forward(model, obs, chosen)
_, d_chosen = qmix_backward(model, mcache, 1.0)
print("Q_tot", round(q_tot, 4), " dQ_tot/dQ_p", d_chosen.round(4))

# And the best joint action for Q_tot is exactly the per-passenger argmax.
best = max(
    itertools.product(range(2), repeat=3),
    key=lambda a: mix_qtot(model, obs, np.r_[q[np.arange(3), list(a)], 0.0]),
)
print("argmax over all joint actions:", list(best))
