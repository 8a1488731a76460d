"""Replay memory, exploration schedule, IDQN/QMIX losses and the training loop.

Every episode is a single decision step, so transitions carry no next state
and the losses regress Q-values directly onto the episode's rewards.

Training configs are INI files with a single ``[train]`` section whose keys
are the :class:`TrainConfig` field names, e.g.::

    [train]
    episodes = 10000
    width = 10
    height = 10
    p = 4
    c = 2
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ridemix.grid_world import ConfigError, build_map, sample_scenario, simulate_episode
from ridemix.obs_encoding import action_mask, encode_observation, epsilon_greedy
from ridemix.policies import IdqnModel, QmixModel, mix_forward, qmix_backward
from ridemix.tensor_core import AdamState, GradientSet, adam_step, huber, huber_grad, net_backward, net_forward

log = logging.getLogger(__name__)

CURVE_HEADER = ("episode", "epsilon", "duration", "loss")


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: tuple[int, ...]
    per_passenger_rewards: tuple[float, ...]
    global_reward: float


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("buffer capacity must be positive")
        self.capacity = capacity
        self.inserted = 0
        self._items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def add(self, t: Transition):
        self._items.append(t)
        self.inserted += 1

    def sample(self, batch_size: int, rng) -> list[Transition]:
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class EpsilonSchedule:
    eps_start: float = 0.9
    eps_end: float = 0.05
    decay: float = 20000.0

    def __post_init__(self):
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigError("need 0 <= eps_end <= eps_start <= 1")
        if self.decay <= 0:
            raise ConfigError("decay must be positive")


def epsilon_at(schedule: EpsilonSchedule, episode: int) -> float:
    return schedule.eps_end + (schedule.eps_start - schedule.eps_end) * math.exp(-episode / schedule.decay)


@dataclass
class TrainConfig:
    episodes: int = 50000
    lr: float = 1e-3
    hidden: int = 128
    depth: int = 2
    batch_size: int = 128
    decay: float = 20000.0
    eps_start: float = 0.9
    eps_end: float = 0.05
    buffer_capacity: int = 10000
    seed: int = 0
    width: int = 100
    height: int = 100
    cost_low: int = 1
    cost_high: int = 10
    routing: str = "xy-lex"
    p: int = 7
    c: int = 2
    p_max: int | None = None
    c_max: int | None = None
    variable: bool = False
    frozen_map: bool = False
    mixing_width: int = 32

    def __post_init__(self):
        if self.p_max is None:
            self.p_max = self.p
        if self.c_max is None:
            self.c_max = self.c
        positive = ("lr", "hidden", "depth", "batch_size", "decay", "buffer_capacity", "p", "c", "mixing_width")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if self.batch_size > self.buffer_capacity:
            raise ConfigError("batch_size exceeds buffer_capacity")
        if self.p > self.p_max or self.c > self.c_max:
            raise ConfigError(f"P={self.p}, C={self.c} exceed P_max={self.p_max}, C_max={self.c_max}")
        EpsilonSchedule(self.eps_start, self.eps_end, self.decay)

    @property
    def schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.eps_start, self.eps_end, self.decay)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ConfigError(f"cannot read config {path}")
        values = dict(parser["train"]) if parser.has_section("train") else {}
        return cls.from_mapping({**values, **overrides})

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if raw is None:
                continue
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(types[key], raw, key)
        return cls(**kwargs)


def _coerce(type_name: str, raw, key: str):
    if not isinstance(raw, str):
        return raw
    try:
        if type_name == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if type_name.startswith("int"):
            return int(raw)
        if type_name == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


@dataclass
class Batch:
    obs: np.ndarray  # (B, D)
    actions: np.ndarray  # (B, P_max), -1 for absent passengers
    rewards: np.ndarray  # (B, P_max), 0 for absent passengers
    global_reward: np.ndarray  # (B,)

    @property
    def present(self) -> np.ndarray:
        return self.actions >= 0


def stack_batch(transitions: Sequence[Transition], p_max: int) -> Batch:
    if not transitions:
        raise ValueError("empty batch")
    n = len(transitions)
    actions = np.full((n, p_max), -1, dtype=np.int64)
    rewards = np.zeros((n, p_max))
    for i, t in enumerate(transitions):
        actions[i, : len(t.action)] = t.action
        rewards[i, : len(t.per_passenger_rewards)] = t.per_passenger_rewards
    obs = np.stack([t.observation for t in transitions])
    return Batch(obs, actions, rewards, np.array([t.global_reward for t in transitions], dtype=float))


def _chosen(q: np.ndarray, batch: Batch) -> np.ndarray:
    idx = np.where(batch.present, batch.actions, 0)[..., None]
    return np.take_along_axis(q, idx, axis=2)[..., 0] * batch.present


def _scatter(d_chosen: np.ndarray, batch: Batch, c_max: int) -> np.ndarray:
    n, p_max = d_chosen.shape
    d_q = np.zeros((n, p_max, c_max))
    idx = np.where(batch.present, batch.actions, 0)[..., None]
    np.put_along_axis(d_q, idx, (d_chosen * batch.present)[..., None], axis=2)
    return d_q.reshape(n, p_max * c_max)


def idqn_loss(model: IdqnModel, transitions) -> tuple[float, dict[str, GradientSet]]:
    """Mean Huber error between each passenger's reward and its chosen Q-value.

    Normalised by ``B * P_max``; absent passenger slots contribute zero.
    """
    batch = transitions if isinstance(transitions, Batch) else stack_batch(transitions, model.p_max)
    n = batch.obs.shape[0]
    out, cache = net_forward(model.net, batch.obs)
    q = out.reshape(n, model.p_max, model.c_max)
    residual = (batch.rewards - _chosen(q, batch)) * batch.present
    scale = 1.0 / (n * model.p_max)
    loss = float(np.sum(huber(residual) * batch.present) * scale)
    d_chosen = -huber_grad(residual) * scale
    grads, _ = net_backward(model.net, cache, _scatter(d_chosen, batch, model.c_max))
    return loss, {"agent": grads}


def qmix_loss(model: QmixModel, transitions) -> tuple[float, dict[str, GradientSet]]:
    """Mean Huber error between the global reward and the mixed ``Q_tot``."""
    batch = transitions if isinstance(transitions, Batch) else stack_batch(transitions, model.p_max)
    n = batch.obs.shape[0]
    out, agent_cache = net_forward(model.agent, batch.obs)
    q = out.reshape(n, model.p_max, model.c_max)
    q_tot, mix_cache = mix_forward(model, batch.obs, _chosen(q, batch))
    residual = batch.global_reward - q_tot
    loss = float(np.mean(huber(residual)))
    grads, d_chosen = qmix_backward(model, mix_cache, -huber_grad(residual) / n)
    grads["agent"], _ = net_backward(model.agent, agent_cache, _scatter(d_chosen, batch, model.c_max))
    return loss, grads


LOSSES = {"idqn": idqn_loss, "qmix": qmix_loss}


def make_model(algo: str, config: TrainConfig, rng=None):
    if algo == "idqn":
        return IdqnModel.create(config.p_max, config.c_max, config.hidden, config.depth, rng)
    if algo == "qmix":
        return QmixModel.create(config.p_max, config.c_max, config.hidden, config.depth, config.mixing_width, rng)
    raise ConfigError(f"unknown algorithm {algo!r}")


@dataclass
class CurvePoint:
    episode: int
    epsilon: float
    duration: int
    loss: float  # nan until the buffer holds a full batch


@dataclass
class TrainResult:
    model: IdqnModel | QmixModel
    curve: list[CurvePoint] = field(default_factory=list)


def train(algo: str, config: TrainConfig, log_every: int = 0) -> TrainResult:
    """Train an IDQN or QMIX dispatcher; fully reproducible from ``config.seed``."""
    if algo not in LOSSES:
        raise ConfigError(f"unknown algorithm {algo!r}")
    init_seq, run_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = make_model(algo, config, np.random.default_rng(init_seq))
    rng = np.random.default_rng(run_seq)
    loss_fn = LOSSES[algo]
    subnets = model.subnets()
    optim = {name: AdamState.for_net(net, lr=config.lr) for name, net in subnets.items()}
    buffer = ReplayBuffer(config.buffer_capacity)
    schedule = config.schedule
    grid = build_map(config.width, config.height, config.cost_low, config.cost_high, rng)
    result = TrainResult(model)

    for episode in range(config.episodes):
        if not config.frozen_map and episode > 0:
            grid = build_map(config.width, config.height, config.cost_low, config.cost_high, rng)
        if config.variable:
            n_p = int(rng.integers(1, config.p_max, endpoint=True))
            n_c = int(rng.integers(1, config.c_max, endpoint=True))
        else:
            n_p, n_c = config.p, config.c
        scenario = sample_scenario(grid, n_p, n_c, rng)
        obs = encode_observation(scenario, config.p_max, config.c_max)
        eps = epsilon_at(schedule, episode)
        action = epsilon_greedy(
            model.q_values(obs), action_mask(scenario, config.p_max, config.c_max), n_p, eps, rng
        )
        outcome = simulate_episode(scenario, action, config.routing)
        buffer.add(
            Transition(obs, tuple(action), tuple(float(r) for r in outcome.per_passenger_reward), float(outcome.global_reward))
        )

        loss = math.nan
        if len(buffer) >= config.batch_size:
            loss, grads = loss_fn(model, buffer.sample(config.batch_size, rng))
            for name, net in subnets.items():
                adam_step(net, grads[name], optim[name])
        result.curve.append(CurvePoint(episode, eps, outcome.duration, loss))
        if log_every and (episode + 1) % log_every == 0:
            recent = result.curve[-log_every:]
            log.info(
                "%s episode %d eps %.3f mean duration %.1f mean loss %.3f",
                algo,
                episode + 1,
                eps,
                np.mean([p.duration for p in recent]),
                np.nanmean([p.loss for p in recent]) if any(not math.isnan(p.loss) for p in recent) else math.nan,
            )
    return result


def write_curve(curve: Sequence[CurvePoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for p in curve:
            writer.writerow([p.episode, repr(p.epsilon), p.duration, repr(p.loss)])


def read_curve(path) -> list[CurvePoint]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [CurvePoint(int(r["episode"]), float(r["epsilon"]), int(r["duration"]), float(r["loss"])) for r in rows]
