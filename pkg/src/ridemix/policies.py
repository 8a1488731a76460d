"""Dispatch policies: Random, Greedy (FCFS nearest car), IDQN and QMIX.

Checkpoint layout for learned models is a directory holding ``manifest.json``
and one ``<subnet>.net`` file per network in the ``tensor_core`` text format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ridemix.grid_world import ConfigError, Scenario, manhattan
from ridemix.obs_encoding import action_mask, encode_observation, joint_action_from_q, observation_size
from ridemix.tensor_core import DenseNet, GradientSet, load_net, net_backward, net_forward, save_net

MANIFEST_FORMAT = "ridemix-model"
MANIFEST_VERSION = 1
NORMALIZATION = "coordinate / (map dimension - 1)"


def random_policy(scenario: Scenario, seed=None) -> list[int]:
    rng = np.random.default_rng(seed)
    return [int(c) for c in rng.integers(scenario.n_cars, size=scenario.n_passengers)]


def greedy_policy(scenario: Scenario) -> list[int]:
    """Each passenger, in FCFS order, takes the car closest in Manhattan distance.

    Uses the cars' starting positions only and never looks at road costs.
    """
    actions = []
    for p in scenario.passengers:
        dists = [manhattan(car.position, p.pickup) for car in scenario.cars]
        actions.append(int(np.argmin(dists)))
    return actions


def _agent_net(p_max, c_max, hidden, depth, rng) -> DenseNet:
    sizes = [observation_size(p_max, c_max)] + [hidden] * depth + [p_max * c_max]
    return DenseNet.create(sizes, ["relu"] * depth + ["identity"], rng)


@dataclass
class IdqnModel:
    net: DenseNet
    p_max: int
    c_max: int

    kind = "idqn"

    @classmethod
    def create(cls, p_max: int, c_max: int, hidden: int = 128, depth: int = 2, rng=None) -> "IdqnModel":
        return cls(_agent_net(p_max, c_max, hidden, depth, rng), p_max, c_max)

    def subnets(self) -> dict[str, DenseNet]:
        return {"agent": self.net}

    def q_values(self, obs) -> np.ndarray:
        return idqn_q(self, obs)


def idqn_q(model: IdqnModel, obs) -> np.ndarray:
    """Q-matrix ``(P_max, C_max)`` for one observation, or ``(B, P_max, C_max)`` for a batch."""
    out = model.net(obs)
    return out.reshape(out.shape[:-1] + (model.p_max, model.c_max))


@dataclass
class QmixModel:
    agent: DenseNet
    hyper_w1: DenseNet
    hyper_w2: DenseNet
    hyper_b1: DenseNet
    hyper_b2: DenseNet
    p_max: int
    c_max: int
    mixing_width: int

    kind = "qmix"
    HYPERNETS = ("hyper_w1", "hyper_w2", "hyper_b1", "hyper_b2")

    @classmethod
    def create(
        cls, p_max: int, c_max: int, hidden: int = 128, depth: int = 2, mixing_width: int = 32, rng=None
    ) -> "QmixModel":
        rng = np.random.default_rng(rng)
        d = observation_size(p_max, c_max)
        m = mixing_width
        return cls(
            agent=_agent_net(p_max, c_max, hidden, depth, rng),
            hyper_w1=DenseNet.create([d, m * p_max], ["abs"], rng),
            hyper_w2=DenseNet.create([d, m], ["abs"], rng),
            hyper_b1=DenseNet.create([d, m], ["identity"], rng),
            hyper_b2=DenseNet.create([d, m, 1], ["relu", "identity"], rng),
            p_max=p_max,
            c_max=c_max,
            mixing_width=m,
        )

    def subnets(self) -> dict[str, DenseNet]:
        return {"agent": self.agent, **{k: getattr(self, k) for k in self.HYPERNETS}}

    def q_values(self, obs) -> np.ndarray:
        out = self.agent(obs)
        return out.reshape(out.shape[:-1] + (self.p_max, self.c_max))

    def mixing_weights(self, obs):
        """Reshaped mixing weights ``W1 (m, P_max)`` and ``W2 (m,)`` for one observation."""
        return (
            self.hyper_w1(obs).reshape(self.mixing_width, self.p_max),
            self.hyper_w2(obs),
        )


@dataclass
class MixCache:
    obs_caches: dict
    chosen_q: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    batched: bool


def mix_forward(model: QmixModel, obs, chosen_q) -> tuple[np.ndarray | float, MixCache]:
    """``Q_tot = W2 . elu(W1 q + b1) + b2`` with state-conditioned, non-negative W1, W2."""
    obs = np.asarray(obs, dtype=float)
    q = np.asarray(chosen_q, dtype=float)
    batched = q.ndim == 2
    if not batched:
        obs, q = obs[None, :], q[None, :]
    if q.shape[1] != model.p_max:
        raise ValueError(f"chosen_q has {q.shape[1]} entries, model expects {model.p_max}")
    caches = {}
    outs = {}
    for name in model.HYPERNETS:
        outs[name], caches[name] = net_forward(getattr(model, name), obs)
    n = q.shape[0]
    w1 = outs["hyper_w1"].reshape(n, model.mixing_width, model.p_max)
    w2 = outs["hyper_w2"]
    pre = np.einsum("bmp,bp->bm", w1, q) + outs["hyper_b1"]
    hidden = np.where(pre > 0, pre, np.expm1(np.minimum(pre, 0.0)))
    q_tot = np.sum(w2 * hidden, axis=1) + outs["hyper_b2"][:, 0]
    cache = MixCache(caches, q, w1, w2, pre, hidden, batched)
    return (q_tot if batched else float(q_tot[0])), cache


def mix_qtot(model: QmixModel, obs, chosen_q):
    return mix_forward(model, obs, chosen_q)[0]


def qmix_backward(model: QmixModel, cache: MixCache, out_grad) -> tuple[dict[str, GradientSet], np.ndarray]:
    """Gradients of ``sum(Q_tot * out_grad)`` for each hypernetwork and w.r.t. ``chosen_q``."""
    g = np.atleast_1d(np.asarray(out_grad, dtype=float))
    n = cache.chosen_q.shape[0]
    if g.shape != (n,):
        raise ValueError(f"out_grad shape {g.shape} does not match batch of {n}")
    d_w2 = g[:, None] * cache.hidden
    d_hidden = g[:, None] * cache.w2
    d_pre = d_hidden * np.where(cache.pre > 0, 1.0, np.exp(np.minimum(cache.pre, 0.0)))
    d_w1 = d_pre[:, :, None] * cache.chosen_q[:, None, :]
    d_q = np.einsum("bmp,bm->bp", cache.w1, d_pre)
    out_grads = {
        "hyper_w1": d_w1.reshape(n, -1),
        "hyper_w2": d_w2,
        "hyper_b1": d_pre,
        "hyper_b2": g[:, None],
    }
    grads = {
        name: net_backward(getattr(model, name), cache.obs_caches[name], out_grads[name])[0]
        for name in model.HYPERNETS
    }
    return grads, (d_q if cache.batched else d_q[0])


# -- policy objects used by the evaluation harness ---------------------------


class RandomPolicy:
    name = "random"

    def act(self, scenario: Scenario, rng) -> list[int]:
        return random_policy(scenario, rng)


class GreedyPolicy:
    name = "greedy"

    def act(self, scenario: Scenario, rng=None) -> list[int]:
        return greedy_policy(scenario)


class LearnedPolicy:
    """Greedy (eps = 0) action selection from a trained IDQN or QMIX model."""

    def __init__(self, model: IdqnModel | QmixModel):
        self.model = model
        self.name = model.kind

    def check_sizes(self, n_passengers: int, n_cars: int):
        if n_passengers > self.model.p_max or n_cars > self.model.c_max:
            raise ConfigError(
                f"{self.name} model supports P_max={self.model.p_max}, C_max={self.model.c_max}; "
                f"got P={n_passengers}, C={n_cars}"
            )

    def act(self, scenario: Scenario, rng=None) -> list[int]:
        m = self.model
        self.check_sizes(scenario.n_passengers, scenario.n_cars)
        q = m.q_values(encode_observation(scenario, m.p_max, m.c_max))
        return joint_action_from_q(q, action_mask(scenario, m.p_max, m.c_max), scenario.n_passengers)


def save_model(model: IdqnModel | QmixModel, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "kind": model.kind,
        "p_max": model.p_max,
        "c_max": model.c_max,
        "mixing_width": getattr(model, "mixing_width", None),
        "normalization": NORMALIZATION,
        "subnets": list(model.subnets()),
    }
    for name, net in model.subnets().items():
        save_net(net, directory / f"{name}.net")
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_model(directory) -> IdqnModel | QmixModel:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no checkpoint manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != MANIFEST_FORMAT or manifest.get("version") != MANIFEST_VERSION:
        raise ConfigError(f"{path} is not a {MANIFEST_FORMAT} v{MANIFEST_VERSION} manifest")
    nets = {name: load_net(directory / f"{name}.net") for name in manifest["subnets"]}
    p_max, c_max = manifest["p_max"], manifest["c_max"]
    if manifest["kind"] == "idqn":
        return IdqnModel(nets["agent"], p_max, c_max)
    if manifest["kind"] == "qmix":
        return QmixModel(**nets, p_max=p_max, c_max=c_max, mixing_width=manifest["mixing_width"])
    raise ConfigError(f"unknown model kind {manifest['kind']!r}")
