"""Scenario library, baseline policies, evaluation rollouts and sweeps.

Seeding convention: seed ``s`` trains from ``train_rng(s)`` and evaluates on
``eval_rng(s)``.  Every algorithm at a sweep point sees the same evaluation
stream, so packet draws are shared across the compared policies.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .d3ql import Agent, D3qlConfig, train_d3ql
from .env import BATTERY, EnvConfig, TrajectorySpec, UavEnv
from .errors import ContractViolation, DomainError
from .metrics import MetricTrace
from .tabular import QTable, TabularParams, epsilon_greedy, train_tabular
from .transfer import SourceKnowledge, TransferMode

log = logging.getLogger(__name__)

SOURCE_MS = "SourceMS"
TARGET_MT1 = "TargetMT1"
TARGET_MT2 = "TargetMT2"
SCENARIOS = (SOURCE_MS, TARGET_MT1, TARGET_MT2)
_ALIASES = {s.lower(): s for s in SCENARIOS}
_ALIASES.update({"source_ms": SOURCE_MS, "target_mt1": TARGET_MT1, "target_mt2": TARGET_MT2})

SWEEP_PARAMS = ("t_b", "v_r", "p3", "E")
CSV_HEADER = ["scenario", "algorithm", "sweep_param", "sweep_value", "seed", "avg_reward",
              "throughput", "energy_per_slot", "train_steps", "eval_slots"]

_SQUARE = ((0.0, 0.0), (60.0, 0.0), (60.0, 60.0), (0.0, 60.0))


def scenario_id(name: str) -> str:
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise DomainError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None


def build_scenario(name: str) -> EnvConfig:
    sid = scenario_id(name)
    if sid == SOURCE_MS:
        traj = TrajectorySpec(_SQUARE, True, (0, 60, 120, 180), (0.1, 0.25, 0.6, 0.15))
    elif sid == TARGET_MT2:
        traj = TrajectorySpec(_SQUARE, True, (0, 60, 120, 180), (0.6, 0.15, 0.1, 0.25))
    else:
        # out along the x axis and back; each leg crosses both 80 m zones
        traj = TrajectorySpec(((0.0, 0.0), (160.0, 0.0)), True, (0, 80, 160, 240),
                              (0.1, 0.25, 0.25, 0.1))
    return EnvConfig(traj)


def scenario_summary(name: str) -> str:
    cfg = build_scenario(name)
    t = cfg.trajectory
    return (f"{scenario_id(name)}: length {t.length:g} m, zones {t.n_zones}, "
            f"p={list(t.zone_probs)}, E={cfg.E}, t_b={cfg.t_b}, v_r={cfg.v_r:g}, "
            f"speeds={[f'{v:g}' for v in cfg.speeds]}, costs={list(cfg.costs)}")


def apply_sweep(cfg: EnvConfig, param: str, value) -> EnvConfig:
    """Copy of ``cfg`` with one swept parameter replaced."""
    if param == "t_b":
        if value != int(value) or value < 1:
            raise DomainError("t_b must be a positive integer")
        return dataclasses.replace(cfg, t_b=int(value))
    if param == "v_r":
        if not value > 0:
            raise DomainError("v_r must be positive")
        return dataclasses.replace(cfg, v_r=float(value))
    if param == "E":
        if value != int(value):
            raise DomainError("E must be an integer")
        return dataclasses.replace(cfg, E=int(value))
    if param == "p3":
        t = cfg.trajectory
        if t.n_zones < 3:
            raise DomainError("p3 needs at least three zones")
        if not 0 <= value <= 1:
            raise DomainError("p3 must lie in [0, 1]")
        probs = list(t.zone_probs)
        probs[2] = float(value)
        return dataclasses.replace(cfg, trajectory=TrajectorySpec(t.waypoints, t.closed, t.zone_breaks,
                                                                  tuple(probs)))
    raise DomainError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEP_PARAMS)}")


def train_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0])


def eval_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


# -- policies -----------------------------------------------------------------

@dataclass(frozen=True)
class FixedSpeed:
    """Always fly at one speed; drop to the fastest affordable speed when the
    battery cannot pay for it.  Never returns voluntarily."""

    speed: int

    def __call__(self, env: UavEnv) -> int:
        feasible = env.feasible()
        if self.speed in feasible:
            return self.speed
        return max(a for a in feasible if a != BATTERY)


@dataclass
class GreedyAgent:
    agent: Agent

    def __call__(self, env: UavEnv) -> int:
        return self.agent.greedy_action(env.features(), self.agent.allowed(env.feasible()))


@dataclass
class GreedyTable:
    table: QTable

    def __call__(self, env: UavEnv) -> int:
        return epsilon_greedy(self.table.row(env.state_key()), env.feasible(), 0.0, None)


Policy = Callable[[UavEnv], int]


@dataclass(frozen=True)
class Metrics:
    avg_reward: float
    throughput: float
    energy_per_slot: float


@dataclass(frozen=True)
class AggregateMetrics:
    """Across-seed means, their standard errors and the per-seed values."""

    mean: Metrics
    stderr: Metrics
    per_seed: Tuple[Metrics, ...]

    @property
    def avg_reward(self) -> float:
        return self.mean.avg_reward


def rollout(cfg: EnvConfig, policy: Policy, eval_slots: int, rng: np.random.Generator) -> Metrics:
    """Run ``policy`` until at least ``eval_slots`` slots have elapsed.

    The rollout stops at the first decision boundary at or past the budget,
    so a final replenishment is never cut in half.
    """
    if eval_slots < 1:
        raise DomainError("eval_slots must be positive")
    env = UavEnv(cfg, rng)
    while env.slots < eval_slots:
        env.decide(policy(env))
    return Metrics(env.average_reward, env.throughput, env.energy_per_slot)


def _aggregate(per_seed: Sequence[Metrics]) -> AggregateMetrics:
    arr = np.array([[m.avg_reward, m.throughput, m.energy_per_slot] for m in per_seed])
    mean = arr.mean(axis=0)
    se = arr.std(axis=0, ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else np.zeros(3)
    return AggregateMetrics(Metrics(*map(float, mean)), Metrics(*map(float, se)), tuple(per_seed))


def evaluate_policy(cfg: EnvConfig, policy: Policy, eval_slots: int, seeds: Sequence[int]) -> AggregateMetrics:
    if not seeds:
        raise DomainError("at least one seed is required")
    return _aggregate([rollout(cfg, policy, eval_slots, eval_rng(s)) for s in seeds])


def run_fixed_policy(cfg: EnvConfig, speed: int, eval_slots: int, seeds: Sequence[int]) -> AggregateMetrics:
    if not 1 <= speed <= cfg.n_speeds:
        raise ContractViolation(f"speed index {speed} outside 1..{cfg.n_speeds}")
    return evaluate_policy(cfg, FixedSpeed(speed), eval_slots, seeds)


# -- algorithms ---------------------------------------------------------------

def parse_algorithm(name: str) -> Tuple[str, Optional[str]]:
    """Split ``fixed:2`` / ``d3ql_tl:pt`` into kind and argument."""
    kind, _, arg = name.partition(":")
    kind = kind.lower()
    if kind == "fixed":
        if not arg.isdigit():
            raise DomainError("fixed policies are written fixed:<speed index>")
        return kind, arg
    if kind in ("qlearning", "d3ql", "d3ql_nora"):
        if arg:
            raise DomainError(f"{kind} takes no argument")
        return kind, None
    if kind == "d3ql_tl":
        if arg not in ("et", "pt", "hybrid"):
            raise DomainError("transfer algorithms are written d3ql_tl:{et,pt,hybrid}")
        return kind, arg
    raise DomainError(f"unknown algorithm {name!r}")


@lru_cache(maxsize=8)
def source_knowledge(seed: int, steps: int) -> SourceKnowledge:
    """D3QL source run on SourceMS: final parameters and every experience."""
    pool = []
    agent, _ = train_d3ql(build_scenario(SOURCE_MS), D3qlConfig(total_steps=steps), train_rng(seed),
                          recorder=pool.append)
    return SourceKnowledge(agent.q_net, pool)


def train_policy(cfg: EnvConfig, algorithm: str, seed: int, steps: int, tl_count: int = 1000,
                 source: Optional[SourceKnowledge] = None) -> Tuple[Policy, Optional[MetricTrace]]:
    kind, arg = parse_algorithm(algorithm)
    if kind == "fixed":
        speed = int(arg)
        if not 1 <= speed <= cfg.n_speeds:
            raise ContractViolation(f"speed index {speed} outside 1..{cfg.n_speeds}")
        return FixedSpeed(speed), None
    rng = train_rng(seed)
    if kind == "qlearning":
        env_rng, agent_rng = rng.spawn(2)
        Q, trace = train_tabular(UavEnv(cfg, env_rng), TabularParams(total_steps=steps), agent_rng)
        return GreedyTable(Q), trace
    d3cfg = D3qlConfig(total_steps=steps)
    if kind == "d3ql_tl":
        mode = TransferMode.policy() if arg == "pt" else TransferMode(arg, tl_count)
        know = source if source is not None else source_knowledge(seed, steps)
        agent, trace = train_d3ql(cfg, d3cfg, rng, transfer=(mode, know))
    else:
        agent, trace = train_d3ql(cfg, d3cfg, rng, mask_battery_action=kind == "d3ql_nora")
    return GreedyAgent(agent), trace


# -- sweeps -------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    scenario: str
    algorithms: Tuple[str, ...]
    seeds: Tuple[int, ...]
    sweep_param: Optional[str] = None
    sweep_values: Tuple[float, ...] = ()
    train_steps: int = 150_000
    eval_slots: int = 100_000
    tl_count: int = 1000
    base: Optional[EnvConfig] = None
    workers: int = 1

    def __post_init__(self):
        self.scenario = scenario_id(self.scenario)
        self.algorithms = tuple(self.algorithms)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.sweep_values = tuple(self.sweep_values)
        if not self.seeds:
            raise DomainError("seeds must be non-empty")
        if not self.algorithms:
            raise DomainError("algorithms must be non-empty")
        for a in self.algorithms:
            parse_algorithm(a)
        if self.sweep_param is not None:
            if not self.sweep_values:
                raise DomainError("a sweep needs at least one value")
            cfg = self.config()
            for v in self.sweep_values:
                apply_sweep(cfg, self.sweep_param, v)
        elif self.sweep_values:
            raise DomainError("sweep values given without a sweep parameter")
        if self.train_steps < 0 or self.eval_slots < 1 or self.workers < 1:
            raise DomainError("train_steps >= 0, eval_slots >= 1 and workers >= 1 required")

    def config(self) -> EnvConfig:
        return self.base if self.base is not None else build_scenario(self.scenario)

    def points(self) -> List[Tuple[Optional[float], str, int]]:
        values = self.sweep_values if self.sweep_param is not None else (None,)
        return [(v, a, s) for v in values for a in self.algorithms for s in self.seeds]


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    algorithm: str
    sweep_param: str
    sweep_value: Optional[float]
    seed: int
    avg_reward: float
    throughput: float
    energy_per_slot: float
    train_steps: int
    eval_slots: int
    error: Optional[str] = None


def _run_point(spec: ExperimentSpec, value, algorithm: str, seed: int) -> ResultRow:
    steps = 0 if algorithm.startswith("fixed") else spec.train_steps
    try:
        cfg = spec.config()
        if spec.sweep_param is not None:
            cfg = apply_sweep(cfg, spec.sweep_param, value)
        policy, _ = train_policy(cfg, algorithm, seed, spec.train_steps, spec.tl_count)
        m = rollout(cfg, policy, spec.eval_slots, eval_rng(seed))
        return ResultRow(spec.scenario, algorithm, spec.sweep_param or "", value, seed,
                         m.avg_reward, m.throughput, m.energy_per_slot, steps, spec.eval_slots)
    except Exception as exc:  # one bad point must not sink the sweep
        log.warning("sweep point %s=%s %s seed %d failed: %s", spec.sweep_param, value, algorithm, seed, exc)
        nan = float("nan")
        return ResultRow(spec.scenario, algorithm, spec.sweep_param or "", value, seed, nan, nan, nan,
                         steps, spec.eval_slots, error=f"{type(exc).__name__}: {exc}")


def _run_point_args(args):
    return _run_point(*args)


def run_sweep(spec: ExperimentSpec) -> List[ResultRow]:
    """One row per (sweep value, algorithm, seed), in that order."""
    jobs = [(spec, v, a, s) for v, a, s in spec.points()]
    if spec.workers == 1:
        return [_run_point_args(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=spec.workers) as pool:
        return list(pool.map(_run_point_args, jobs))


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".10g")


def emit_csv(rows: Sequence[ResultRow], destination) -> None:
    """Write rows under the fixed header; ``destination`` is a path or ``"-"``."""
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.scenario, r.algorithm, r.sweep_param, _num(r.sweep_value), r.seed,
                        _num(r.avg_reward), _num(r.throughput), _num(r.energy_per_slot),
                        r.train_steps, r.eval_slots])

    if destination == "-":
        write(sys.stdout)
        return
    with open(Path(destination), "w", newline="") as fh:
        write(fh)


_SPEC_KEYS = {"scenario", "algorithm", "algorithms", "sweep", "seeds", "steps", "eval_slots",
              "tl_count", "workers"}


def spec_from_dict(d: Dict, base: Optional[EnvConfig] = None) -> ExperimentSpec:
    """Experiment keys plus optional scenario overrides in the env schema."""
    from .env import config_from_dict

    if "scenario" not in d:
        raise DomainError("experiment spec needs a scenario")
    algos = d.get("algorithms", d.get("algorithm"))
    if algos is None:
        raise DomainError("experiment spec needs algorithm(s)")
    if isinstance(algos, str):
        algos = [algos]
    overrides = {k: v for k, v in d.items() if k not in _SPEC_KEYS}
    cfg = base if base is not None else build_scenario(d["scenario"])
    if overrides:
        cfg = config_from_dict(overrides, base=cfg)
    sweep = d.get("sweep") or {}
    extra = set(sweep) - {"param", "values"}
    if extra:
        raise DomainError(f"unknown keys in sweep: {sorted(extra)}")
    return ExperimentSpec(
        scenario=d["scenario"],
        algorithms=tuple(algos),
        seeds=tuple(d.get("seeds", ())),
        sweep_param=sweep.get("param"),
        sweep_values=tuple(sweep.get("values", ())),
        train_steps=int(d.get("steps", 150_000)),
        eval_slots=int(d.get("eval_slots", 100_000)),
        tl_count=int(d.get("tl_count", 1000)),
        base=cfg,
        workers=int(d.get("workers", 1)),
    )
