"""Evaluation harness, comparison suites and the ``ridemix`` command line.

Suite files are INI documents::

    [suite]
    n = 1000            ; evaluation episodes per cell
    seed = 0
    baselines = greedy, random, idqn

    [cell qmix-7-2]
    method = qmix       ; random | greedy | idqn | qmix
    checkpoint = runs/qmix-7-2
    map = 100x100
    p = 7
    c = 2
    variable = false    ; when true, P and C are maxima sampled per episode
    cost_low = 1
    cost_high = 10
    routing = xy-lex

Relative paths in a suite resolve against the suite file's directory.

Exit codes: 0 ok, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ridemix.grid_world import ROUTING_MODES, ConfigError, build_map, sample_scenario, simulate_episode
from ridemix.policies import GreedyPolicy, LearnedPolicy, RandomPolicy, load_model, save_model
from ridemix.training import TrainConfig, train, write_curve

log = logging.getLogger(__name__)

METHODS = ("random", "greedy", "idqn", "qmix")
LEARNED = ("idqn", "qmix")
REPORT_HEADER = ("method", "map", "P", "C", "mean", "stderr", "n", "seed", "mode")
IMPROVEMENT_HEADER = ("map", "P", "C", "mode", "method", "baseline", "pct_faster")


@dataclass(frozen=True)
class MapSpec:
    width: int
    height: int
    cost_low: int = 1
    cost_high: int = 10
    routing: str = "xy-lex"

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ConfigError(f"map must be at least 2x2, got {self.label}")
        if not 1 <= self.cost_low <= self.cost_high:
            raise ConfigError(f"invalid cost range [{self.cost_low}, {self.cost_high}]")
        if self.routing not in ROUTING_MODES:
            raise ConfigError(f"unknown routing mode {self.routing!r}")

    @classmethod
    def parse(cls, text: str, **kwargs) -> "MapSpec":
        try:
            w, h = (int(v) for v in text.lower().split("x"))
        except ValueError:
            raise ConfigError(f"map size must look like 10x10, got {text!r}") from None
        return cls(w, h, **kwargs)

    @property
    def label(self) -> str:
        return f"{self.width}x{self.height}"


@dataclass(frozen=True)
class AgentConfig:
    p: int
    c: int
    variable: bool = False

    def __post_init__(self):
        if self.p < 1 or self.c < 1:
            raise ConfigError("need at least one passenger and one car")

    def sample(self, rng) -> tuple[int, int]:
        if not self.variable:
            return self.p, self.c
        return int(rng.integers(1, self.p, endpoint=True)), int(rng.integers(1, self.c, endpoint=True))


@dataclass(frozen=True)
class EvalReport:
    method: str
    map: str
    p: int
    c: int
    mean: float
    stderr: float
    n: int
    seed: int
    variable: bool = False

    @property
    def mode(self) -> str:
        return "variable" if self.variable else "fixed"

    def row(self) -> list:
        return [self.method, self.map, self.p, self.c, repr(self.mean), repr(self.stderr), self.n, self.seed, self.mode]


def make_policy(method: str, checkpoint=None):
    if method == "random":
        return RandomPolicy()
    if method == "greedy":
        return GreedyPolicy()
    if method in LEARNED:
        if checkpoint is None:
            raise ConfigError(f"method {method} needs a checkpoint")
        model = load_model(checkpoint)
        if model.kind != method:
            raise ConfigError(f"checkpoint {checkpoint} holds a {model.kind} model, not {method}")
        return LearnedPolicy(model)
    raise ConfigError(f"unknown method {method!r}")


def run_eval(policy, map_spec: MapSpec, agents: AgentConfig, n: int, seed: int) -> EvalReport:
    """Mean episode duration over ``n`` episodes, each with a fresh map and scenario.

    Episode ``i`` draws everything from its own stream seeded by ``(seed, i)``.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    if isinstance(policy, LearnedPolicy):
        policy.check_sizes(agents.p, agents.c)
    durations = np.empty(n)
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        grid = build_map(map_spec.width, map_spec.height, map_spec.cost_low, map_spec.cost_high, rng)
        n_p, n_c = agents.sample(rng)
        scenario = sample_scenario(grid, n_p, n_c, rng)
        durations[i] = simulate_episode(scenario, policy.act(scenario, rng), map_spec.routing).duration
    mean = math.fsum(durations) / n
    stderr = float(np.std(durations, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EvalReport(policy.name, map_spec.label, agents.p, agents.c, mean, stderr, n, seed, agents.variable)


def improvement_pct(baseline_mean: float, method_mean: float) -> float:
    """How much faster ``method`` is than ``baseline``, in percent."""
    return (baseline_mean - method_mean) / baseline_mean * 100.0


@dataclass(frozen=True)
class Improvement:
    map: str
    p: int
    c: int
    mode: str
    method: str
    baseline: str
    pct: float


def improvements(reports: Sequence[EvalReport], baselines: Sequence[str] = ("greedy", "random", "idqn")) -> list[Improvement]:
    """Pairwise speed-ups of every method over each baseline evaluated on the same cell."""
    by_cell: dict[tuple, dict[str, EvalReport]] = {}
    for r in reports:
        by_cell.setdefault((r.map, r.p, r.c, r.mode), {})[r.method] = r
    out = []
    for (map_label, p, c, mode), methods in by_cell.items():
        for base in baselines:
            if base not in methods:
                continue
            for name, r in methods.items():
                if name != base:
                    out.append(Improvement(map_label, p, c, mode, name, base, improvement_pct(methods[base].mean, r.mean)))
    return out


@dataclass
class Cell:
    method: str
    map_spec: MapSpec
    agents: AgentConfig
    checkpoint: Path | None = None
    name: str = ""


@dataclass
class SuiteConfig:
    cells: list[Cell]
    n: int = 1000
    seed: int = 0
    baselines: tuple[str, ...] = ("greedy", "random", "idqn")

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        for cell in self.cells:
            if cell.method not in METHODS:
                raise ConfigError(f"cell {cell.name}: unknown method {cell.method!r}")
            if cell.method in LEARNED and cell.checkpoint is None:
                raise ConfigError(f"cell {cell.name}: {cell.method} needs a checkpoint")

    @classmethod
    def from_file(cls, path) -> "SuiteConfig":
        path = Path(path)
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            if not parser.read(path):
                raise ConfigError(f"cannot read suite {path}")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        suite = parser["suite"] if parser.has_section("suite") else {}
        cells = []
        try:
            for section in parser.sections():
                if not section.startswith("cell"):
                    continue
                s = parser[section]
                ckpt = s.get("checkpoint")
                cells.append(
                    Cell(
                        method=s.get("method", "").strip(),
                        map_spec=MapSpec.parse(
                            s.get("map", "100x100"),
                            cost_low=s.getint("cost_low", 1),
                            cost_high=s.getint("cost_high", 10),
                            routing=s.get("routing", "xy-lex"),
                        ),
                        agents=AgentConfig(s.getint("p"), s.getint("c"), s.getboolean("variable", False)),
                        checkpoint=(path.parent / ckpt) if ckpt else None,
                        name=section,
                    )
                )
            baselines = tuple(b.strip() for b in suite.get("baselines", "greedy, random, idqn").split(",") if b.strip())
            return cls(cells, int(suite.get("n", 1000)), int(suite.get("seed", 0)), baselines)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class SuiteResult:
    reports: list[EvalReport] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)
    improvements: list[Improvement] = field(default_factory=list)

    def reports_csv(self) -> str:
        return _csv(REPORT_HEADER, [r.row() for r in self.reports])

    def improvements_csv(self) -> str:
        rows = [[i.map, i.p, i.c, i.mode, i.method, i.baseline, f"{i.pct:.6f}"] for i in self.improvements]
        return _csv(IMPROVEMENT_HEADER, rows)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def run_suite(config: SuiteConfig) -> SuiteResult:
    """Evaluate every cell; a failing cell is recorded and the rest still run."""
    result = SuiteResult()
    for cell in config.cells:
        try:
            policy = make_policy(cell.method, cell.checkpoint)
            report = run_eval(policy, cell.map_spec, cell.agents, config.n, config.seed)
        except Exception as exc:  # noqa: BLE001 - per-cell isolation
            log.warning("cell %s failed: %s", cell.name, exc)
            result.failures.append((cell.name, f"{type(exc).__name__}: {exc}"))
            continue
        result.reports.append(report)
    result.improvements = improvements(result.reports, config.baselines)
    return result


# -- command line ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ridemix", description="Ridesharing dispatch experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train an IDQN or QMIX dispatcher")
    t.add_argument("--algo", choices=LEARNED, required=True)
    t.add_argument("--config", help="INI file with a [train] section")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--curve", help="learning-curve CSV (default: <out>/curve.csv)")
    t.add_argument("--seed", type=int)
    t.add_argument("--episodes", type=int)
    t.add_argument("--map", help="WxH, e.g. 100x100")
    t.add_argument("--p", type=int)
    t.add_argument("--c", type=int)
    t.add_argument("--p-max", type=int)
    t.add_argument("--c-max", type=int)
    t.add_argument("--variable", action="store_true", default=None)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--decay", type=float)
    t.add_argument("--log-every", type=int, default=0)

    e = sub.add_parser("eval", help="evaluate one method on one cell")
    e.add_argument("--method", choices=METHODS, required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--map", required=True)
    e.add_argument("--p", type=int, required=True)
    e.add_argument("--c", type=int, required=True)
    e.add_argument("--variable", action="store_true")
    e.add_argument("--n", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--cost-low", type=int, default=1)
    e.add_argument("--cost-high", type=int, default=10)
    e.add_argument("--routing", choices=ROUTING_MODES, default="xy-lex")
    e.add_argument("--out", help="write the report CSV here as well")

    c = sub.add_parser("compare", help="run a suite of cells and tabulate")
    c.add_argument("--suite", required=True)
    c.add_argument("--out", help="report CSV path")
    c.add_argument("--improvements", help="improvement CSV path")
    c.add_argument("--n", type=int, help="override the suite's episode count")
    c.add_argument("--seed", type=int, help="override the suite's seed")
    return parser


def _cmd_train(args) -> int:
    overrides = {
        "seed": args.seed,
        "episodes": args.episodes,
        "p": args.p,
        "c": args.c,
        "p_max": args.p_max,
        "c_max": args.c_max,
        "variable": args.variable,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "decay": args.decay,
    }
    if args.map:
        spec = MapSpec.parse(args.map)
        overrides["width"], overrides["height"] = spec.width, spec.height
    overrides = {k: v for k, v in overrides.items() if v is not None}
    config = TrainConfig.from_file(args.config, **overrides) if args.config else TrainConfig.from_mapping(overrides)
    result = train(args.algo, config, log_every=args.log_every)
    out = Path(args.out)
    save_model(result.model, out)
    write_curve(result.curve, args.curve or out / "curve.csv")
    print(f"saved {args.algo} checkpoint to {out}")
    return 0


def _cmd_eval(args) -> int:
    spec = MapSpec.parse(args.map, cost_low=args.cost_low, cost_high=args.cost_high, routing=args.routing)
    policy = make_policy(args.method, args.checkpoint)
    report = run_eval(policy, spec, AgentConfig(args.p, args.c, args.variable), args.n, args.seed)
    text = _csv(REPORT_HEADER, [report.row()])
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


def _cmd_compare(args) -> int:
    config = SuiteConfig.from_file(args.suite)
    if args.n is not None:
        config.n = args.n
    if args.seed is not None:
        config.seed = args.seed
    result = run_suite(config)
    sys.stdout.write(result.reports_csv())
    if result.improvements:
        sys.stdout.write("\n" + result.improvements_csv())
    if args.out:
        Path(args.out).write_text(result.reports_csv())
    if args.improvements:
        Path(args.improvements).write_text(result.improvements_csv())
    for name, err in result.failures:
        print(f"cell {name} failed: {err}", file=sys.stderr)
    return 2 if result.failures else 0


COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "compare": _cmd_compare}


def cli(argv: Sequence[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        if getattr(args, "log_every", 0):
            logging.basicConfig(level=logging.INFO, format="%(message)s")
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ridemix: configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"ridemix: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli())
