"""Observation vectors, action masks and FCFS joint-action selection."""

from __future__ import annotations

import numpy as np

from ridemix.grid_world import ConfigError, Scenario


class InvalidStateError(ValueError):
    """A present passenger has no selectable car."""


def observation_size(p_max: int, c_max: int) -> int:
    return 3 * c_max + 5 * p_max


def encode_observation(scenario: Scenario, p_max: int, c_max: int) -> np.ndarray:
    """Flat vector ``(car xy * C_max, I_c, passenger (px, py, dx, dy) * P_max, I_p)``.

    Coordinates are divided by ``map dimension - 1`` so every map size lands
    in ``[0, 1]``; slots of absent cars or passengers stay exactly zero.
    """
    if scenario.n_cars > c_max or scenario.n_passengers > p_max:
        raise ConfigError(
            f"scenario has P={scenario.n_passengers}, C={scenario.n_cars}; "
            f"encoder supports P_max={p_max}, C_max={c_max}"
        )
    sx = 1.0 / (scenario.map.width - 1)
    sy = 1.0 / (scenario.map.height - 1)
    obs = np.zeros(observation_size(p_max, c_max))
    cars = obs[: 2 * c_max].reshape(c_max, 2)
    car_ind = obs[2 * c_max : 3 * c_max]
    pas = obs[3 * c_max : 3 * c_max + 4 * p_max].reshape(p_max, 4)
    pas_ind = obs[3 * c_max + 4 * p_max :]
    for j, car in enumerate(scenario.cars):
        cars[j] = car.position[0] * sx, car.position[1] * sy
        car_ind[j] = 1.0
    for i, p in enumerate(scenario.passengers):
        pas[i] = p.pickup[0] * sx, p.pickup[1] * sy, p.dropoff[0] * sx, p.dropoff[1] * sy
        pas_ind[i] = 1.0
    return obs


def action_mask(scenario: Scenario, p_max: int, c_max: int) -> np.ndarray:
    mask = np.zeros((p_max, c_max), dtype=bool)
    mask[: scenario.n_passengers, : scenario.n_cars] = True
    return mask


def joint_action_from_q(q: np.ndarray, mask: np.ndarray, n_passengers: int) -> list[int]:
    """Row-wise argmax over unmasked cars for the first ``n_passengers`` rows.

    Cars stay available after being picked; ties go to the lowest index.
    """
    actions = []
    for i in range(n_passengers):
        row_mask = mask[i]
        if not row_mask.any():
            raise InvalidStateError(f"passenger row {i} has no selectable car")
        # np.argmax returns the first maximum, which is the lowest index
        actions.append(int(np.argmax(np.where(row_mask, q[i], -np.inf))))
    return actions


def epsilon_greedy(q: np.ndarray, mask: np.ndarray, n_passengers: int, eps: float, seed=None) -> list[int]:
    """Per passenger: a uniform random valid car with probability ``eps``, else greedy."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must be in [0, 1], got {eps}")
    rng = np.random.default_rng(seed)
    greedy = joint_action_from_q(q, mask, n_passengers)
    actions = []
    for i in range(n_passengers):
        if rng.random() < eps:
            valid = np.flatnonzero(mask[i])
            actions.append(int(valid[rng.integers(len(valid))]))
        else:
            actions.append(greedy[i])
    return actions
