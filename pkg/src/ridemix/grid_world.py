"""Grid-map environment: hidden road costs, scenario sampling and episode simulation.

Nodes are integer coordinates ``(x, y)`` with ``0 <= x < width`` and
``0 <= y < height``.  Edge costs are stored as two integer arrays:

* ``h_costs[x, y]`` is the cost of the road between ``(x, y)`` and ``(x + 1, y)``,
  shape ``(width - 1, height)``;
* ``v_costs[x, y]`` is the cost of the road between ``(x, y)`` and ``(x, y + 1)``,
  shape ``(width, height - 1)``.

Text format (one record per line, ``#`` starts a comment)::

    ridemix-map 1
    size <width> <height>
    h <x> <y> <cost>
    v <x> <y> <cost>

A scenario file is the map block followed by::

    ridemix-scenario 1
    car <id> <x> <y>
    passenger <id> <rank> <px> <py> <dx> <dy>
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

Coord = tuple[int, int]

ROUTING_MODES = ("xy-lex", "min-time")

MAP_HEADER = "ridemix-map 1"
SCENARIO_HEADER = "ridemix-scenario 1"


class ConfigError(ValueError):
    """Invalid sizes, ranges or configuration values."""


class InvalidActionError(ValueError):
    """An assignment references a car that is not on the map."""


@dataclass(frozen=True, eq=False)
class GridMap:
    width: int
    height: int
    h_costs: np.ndarray
    v_costs: np.ndarray

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ConfigError(f"map must be at least 2x2, got {self.width}x{self.height}")
        if self.h_costs.shape != (self.width - 1, self.height):
            raise ConfigError(f"h_costs has shape {self.h_costs.shape}")
        if self.v_costs.shape != (self.width, self.height - 1):
            raise ConfigError(f"v_costs has shape {self.v_costs.shape}")
        if self.h_costs.min() < 1 or self.v_costs.min() < 1:
            raise ConfigError("edge costs must be >= 1")
        self.h_costs.setflags(write=False)
        self.v_costs.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.h_costs, other.h_costs)
            and np.array_equal(self.v_costs, other.v_costs)
        )

    __hash__ = None

    @property
    def n_edges(self) -> int:
        return self.h_costs.size + self.v_costs.size

    def contains(self, node: Coord) -> bool:
        x, y = node
        return 0 <= x < self.width and 0 <= y < self.height

    def edge_cost(self, a: Coord, b: Coord) -> int:
        """Cost of the road between two adjacent nodes."""
        self._check(a)
        self._check(b)
        (ax, ay), (bx, by) = a, b
        if ay == by and abs(ax - bx) == 1:
            return int(self.h_costs[min(ax, bx), ay])
        if ax == bx and abs(ay - by) == 1:
            return int(self.v_costs[ax, min(ay, by)])
        raise ValueError(f"{a} and {b} are not adjacent")

    def edges(self) -> Iterator[tuple[Coord, Coord, int]]:
        """Yield every undirected edge once as ``(a, b, cost)`` with ``a < b``."""
        for x in range(self.width - 1):
            for y in range(self.height):
                yield (x, y), (x + 1, y), int(self.h_costs[x, y])
        for x in range(self.width):
            for y in range(self.height - 1):
                yield (x, y), (x, y + 1), int(self.v_costs[x, y])

    def _check(self, node: Coord):
        if not self.contains(node):
            raise ValueError(f"node {node} outside {self.width}x{self.height} map")

    @cached_property
    def _graph(self):
        # node index = x * height + y
        h = self.height
        xs, ys = np.meshgrid(np.arange(self.width - 1), np.arange(h), indexing="ij")
        h_src = (xs * h + ys).ravel()
        h_dst = h_src + h
        xs, ys = np.meshgrid(np.arange(self.width), np.arange(h - 1), indexing="ij")
        v_src = (xs * h + ys).ravel()
        v_dst = v_src + 1
        src = np.concatenate([h_src, v_src, h_dst, v_dst])
        dst = np.concatenate([h_dst, v_dst, h_src, v_src])
        w = np.concatenate([self.h_costs.ravel(), self.v_costs.ravel()] * 2).astype(float)
        n = self.width * h
        return coo_matrix((w, (src, dst)), shape=(n, n)).tocsr()


@dataclass(frozen=True)
class Car:
    id: int
    position: Coord
    service_queue: tuple[int, ...] = ()


@dataclass(frozen=True)
class Passenger:
    id: int
    pickup: Coord
    dropoff: Coord
    request_rank: int
    wait_time: int | None = None
    status: str = "waiting"  # waiting | riding | done


@dataclass(frozen=True)
class Scenario:
    """Cars and passengers of one episode.

    Passengers are listed in FCFS order (ascending ``request_rank``); an
    assignment's i-th entry always refers to ``passengers[i]``.
    """

    cars: tuple[Car, ...]
    passengers: tuple[Passenger, ...]
    map: GridMap = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cars", tuple(self.cars))
        object.__setattr__(self, "passengers", tuple(self.passengers))
        if not self.cars:
            raise ConfigError("scenario needs at least one car")
        if not self.passengers:
            raise ConfigError("scenario needs at least one passenger")
        ranks = [p.request_rank for p in self.passengers]
        if len(set(ranks)) != len(ranks):
            raise ConfigError("request ranks must be unique")
        if ranks != sorted(ranks):
            raise ConfigError("passengers must be listed in request_rank order")
        for car in self.cars:
            if not self.map.contains(car.position):
                raise ConfigError(f"car {car.id} at {car.position} is off the map")
        for p in self.passengers:
            if not (self.map.contains(p.pickup) and self.map.contains(p.dropoff)):
                raise ConfigError(f"passenger {p.id} has an off-map endpoint")
            if p.pickup == p.dropoff:
                raise ConfigError(f"passenger {p.id} has pickup == dropoff")

    @property
    def n_cars(self) -> int:
        return len(self.cars)

    @property
    def n_passengers(self) -> int:
        return len(self.passengers)


@dataclass(frozen=True)
class EpisodeResult:
    per_passenger_wait: tuple[int, ...]
    duration: int
    passengers: tuple[Passenger, ...] = field(default=(), compare=False, repr=False)

    @property
    def per_passenger_reward(self) -> tuple[int, ...]:
        return tuple(-w for w in self.per_passenger_wait)

    @property
    def global_reward(self) -> int:
        return -self.duration


def build_map(width: int, height: int, cost_low: int = 1, cost_high: int = 10, seed=None) -> GridMap:
    """Grid map whose edge costs are independent uniform integers in ``[cost_low, cost_high]``.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    if width < 2 or height < 2:
        raise ConfigError(f"map must be at least 2x2, got {width}x{height}")
    if not 1 <= cost_low <= cost_high:
        raise ConfigError(f"invalid cost range [{cost_low}, {cost_high}]")
    rng = np.random.default_rng(seed)
    h = rng.integers(cost_low, cost_high, size=(width - 1, height), endpoint=True)
    v = rng.integers(cost_low, cost_high, size=(width, height - 1), endpoint=True)
    return GridMap(width, height, h.astype(np.int64), v.astype(np.int64))


def manhattan(a: Coord, b: Coord) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def traverse_time(grid: GridMap, start: Coord, end: Coord, routing: str = "xy-lex") -> int:
    """Time for a car to drive from ``start`` to ``end``.

    ``xy-lex`` drives along x to the target column, then along y.
    ``min-time`` takes the least-cost path.
    """
    grid._check(start)
    grid._check(end)
    if start == end:
        return 0
    if routing == "xy-lex":
        (x0, y0), (x1, y1) = start, end
        t = grid.h_costs[min(x0, x1):max(x0, x1), y0].sum()
        t += grid.v_costs[x1, min(y0, y1):max(y0, y1)].sum()
        return int(t)
    if routing == "min-time":
        h = grid.height
        dist = dijkstra(grid._graph, indices=start[0] * h + start[1])
        return int(round(dist[end[0] * h + end[1]]))
    raise ConfigError(f"unknown routing mode {routing!r}")


def _random_node(rng, grid: GridMap) -> Coord:
    return int(rng.integers(grid.width)), int(rng.integers(grid.height))


def sample_scenario(grid: GridMap, n_passengers: int, n_cars: int, seed=None) -> Scenario:
    """Uniformly random cars, pickups and dropoffs; rank follows sampling order."""
    if n_passengers < 1 or n_cars < 1:
        raise ConfigError("need at least one passenger and one car")
    rng = np.random.default_rng(seed)
    cars = [Car(i, _random_node(rng, grid)) for i in range(n_cars)]
    passengers = []
    for i in range(n_passengers):
        dropoff = _random_node(rng, grid)
        pickup = _random_node(rng, grid)
        while pickup == dropoff:
            pickup = _random_node(rng, grid)
        passengers.append(Passenger(i, pickup, dropoff, request_rank=i))
    return Scenario(tuple(cars), tuple(passengers), grid)


def assign_queues(scenario: Scenario, assignment: Sequence[int]) -> tuple[Car, ...]:
    """Cars with their service queues filled from ``assignment`` (FCFS within a car)."""
    if len(assignment) != scenario.n_passengers:
        raise InvalidActionError(
            f"assignment has {len(assignment)} entries for {scenario.n_passengers} passengers"
        )
    queues: list[list[int]] = [[] for _ in scenario.cars]
    for idx, car in enumerate(assignment):
        car = int(car)
        if not 0 <= car < scenario.n_cars:
            raise InvalidActionError(f"passenger {idx} assigned to missing car {car}")
        queues[car].append(idx)
    return tuple(dataclasses.replace(c, service_queue=tuple(q)) for c, q in zip(scenario.cars, queues))


def simulate_episode(scenario: Scenario, assignment: Sequence[int], routing: str = "xy-lex") -> EpisodeResult:
    """Run every car through its queue in parallel and report waits and duration."""
    grid = scenario.map
    waits = [0] * scenario.n_passengers
    duration = 0
    for car in assign_queues(scenario, assignment):
        clock = 0
        pos = car.position
        for idx in car.service_queue:
            p = scenario.passengers[idx]
            clock += traverse_time(grid, pos, p.pickup, routing)
            waits[idx] = clock
            clock += traverse_time(grid, p.pickup, p.dropoff, routing)
            pos = p.dropoff
        duration = max(duration, clock)
    served = tuple(
        dataclasses.replace(p, wait_time=w, status="done") for p, w in zip(scenario.passengers, waits)
    )
    return EpisodeResult(tuple(waits), duration, served)


# -- text serialization -------------------------------------------------------


def dump_map(grid: GridMap) -> str:
    out = io.StringIO()
    out.write(f"{MAP_HEADER}\nsize {grid.width} {grid.height}\n")
    for x in range(grid.width - 1):
        for y in range(grid.height):
            out.write(f"h {x} {y} {grid.h_costs[x, y]}\n")
    for x in range(grid.width):
        for y in range(grid.height - 1):
            out.write(f"v {x} {y} {grid.v_costs[x, y]}\n")
    return out.getvalue()


def dump_scenario(scenario: Scenario) -> str:
    lines = [dump_map(scenario.map).rstrip("\n"), SCENARIO_HEADER]
    for c in scenario.cars:
        lines.append(f"car {c.id} {c.position[0]} {c.position[1]}")
    for p in scenario.passengers:
        lines.append(
            f"passenger {p.id} {p.request_rank} {p.pickup[0]} {p.pickup[1]} {p.dropoff[0]} {p.dropoff[1]}"
        )
    return "\n".join(lines) + "\n"


def _records(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def load_map(text: str) -> GridMap:
    return _parse(text, want_scenario=False)


def load_scenario(text: str) -> Scenario:
    return _parse(text, want_scenario=True)


def _parse(text: str, want_scenario: bool):
    h_costs = v_costs = None
    seen_header = False
    cars, passengers = [], []
    for lineno, tok in _records(text):
        try:
            kind = tok[0]
            if " ".join(tok) == MAP_HEADER:
                seen_header = True
            elif " ".join(tok) == SCENARIO_HEADER:
                pass
            elif kind == "size":
                w, h = int(tok[1]), int(tok[2])
                h_costs = np.zeros((w - 1, h), dtype=np.int64)
                v_costs = np.zeros((w, h - 1), dtype=np.int64)
            elif kind == "h":
                h_costs[int(tok[1]), int(tok[2])] = int(tok[3])
            elif kind == "v":
                v_costs[int(tok[1]), int(tok[2])] = int(tok[3])
            elif kind == "car":
                cars.append(Car(int(tok[1]), (int(tok[2]), int(tok[3]))))
            elif kind == "passenger":
                i, rank, px, py, dx, dy = map(int, tok[1:7])
                passengers.append(Passenger(i, (px, py), (dx, dy), request_rank=rank))
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (IndexError, TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    if not seen_header or h_costs is None:
        raise ConfigError("missing map header or size record")
    grid = GridMap(w, h, h_costs, v_costs)
    if not want_scenario:
        return grid
    passengers.sort(key=lambda p: p.request_rank)
    return Scenario(tuple(cars), tuple(passengers), grid)
