import contextlib

import numpy as np
import pytest

from ridemix.grid_world import Car, GridMap, Passenger, Scenario, build_map, sample_scenario
from ridemix.obs_encoding import encode_observation
from ridemix.policies import QmixModel
from ridemix.training import TrainConfig, train


def uniform_map(width, height, cost=1):
    return GridMap(
        width,
        height,
        np.full((width - 1, height), cost, dtype=np.int64),
        np.full((width, height - 1), cost, dtype=np.int64),
    )


def make_scenario(grid, cars, passengers):
    """``cars``: list of (x, y); ``passengers``: list of (pickup, dropoff)."""
    return Scenario(
        tuple(Car(i, pos) for i, pos in enumerate(cars)),
        tuple(Passenger(i, pu, do, request_rank=i) for i, (pu, do) in enumerate(passengers)),
        grid,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_qmix(rng, p_max=2, c_max=2, hidden=4, mixing_width=3, scale=None):
    """Small QMIX model with parameters spread over several magnitudes."""
    model = QmixModel.create(p_max, c_max, hidden=hidden, mixing_width=mixing_width, rng=rng)
    for net in model.subnets().values():
        for p in net.params():
            p *= scale if scale is not None else 10 ** rng.uniform(-1, 1)
    return model


def random_observation(rng, p_max, c_max):
    grid = build_map(int(rng.integers(2, 20)), int(rng.integers(2, 20)), seed=rng)
    s = sample_scenario(grid, int(rng.integers(1, p_max + 1)), int(rng.integers(1, c_max + 1)), seed=rng)
    return encode_observation(s, p_max, c_max)


DESK_SEEDS = (0, 1, 2)


def desk_config(seed, episodes=10_000):
    return TrainConfig(episodes=episodes, width=10, height=10, p=4, c=2, seed=seed)


@pytest.fixture(scope="session")
def desk_runs():
    """QMIX trained on a 10x10 map, P=4, C=2, 10000 episodes, one run per seed."""
    return {seed: train("qmix", desk_config(seed)) for seed in DESK_SEEDS}


_criteria: list[tuple[str, bool, str]] = []


@contextlib.contextmanager
def criterion(label):
    """Record a PASS/FAIL line for an acceptance criterion; yields a dict for detail text."""
    info = {"detail": ""}
    try:
        yield info
    except BaseException:
        _criteria.append((label, False, info["detail"]))
        raise
    _criteria.append((label, True, info["detail"]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _criteria:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else ""))
