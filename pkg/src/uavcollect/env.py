"""UAV data-collection simulator.

The UAV flies along a fixed planar trajectory split into zones, each with its
own per-slot probability of collecting one packet.  Every working slot it picks
a speed (costing energy) or returns to the station to swap its battery.  While
replenishing it is unavailable for ``2 * t_f + t_b`` slots.

Action ids: ``-1`` idle (replenishing only), ``0`` battery replacement,
``1..A`` speed levels.
"""
from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .errors import ContractViolation, DomainError

IDLE = -1
BATTERY = 0


@dataclass(frozen=True)
class TrajectorySpec:
    """Polyline trajectory with an arc-length zone partition."""

    waypoints: tuple
    closed: bool
    zone_breaks: tuple
    zone_probs: tuple
    _cum: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.waypoints)
        object.__setattr__(self, "waypoints", pts)
        object.__setattr__(self, "zone_breaks", tuple(float(b) for b in self.zone_breaks))
        object.__setattr__(self, "zone_probs", tuple(float(p) for p in self.zone_probs))
        if len(pts) < 2:
            raise DomainError("trajectory needs at least two waypoints")
        if any(x < 0 or y < 0 for x, y in pts):
            raise DomainError("waypoint coordinates must be non-negative")
        segs = list(zip(pts[:-1], pts[1:]))
        if self.closed:
            segs.append((pts[-1], pts[0]))
        cum = [0.0]
        for a, b in segs:
            d = math.dist(a, b)
            if d == 0:
                raise DomainError("consecutive waypoints must be distinct")
            cum.append(cum[-1] + d)
        object.__setattr__(self, "_cum", tuple(cum))

        brk = self.zone_breaks
        if not brk or brk[0] != 0.0:
            raise DomainError("zone_breaks must start at 0")
        if any(b1 >= b2 for b1, b2 in zip(brk[:-1], brk[1:])):
            raise DomainError("zone_breaks must be strictly increasing")
        if brk[-1] >= self.length:
            raise DomainError("zone_breaks must lie below the trajectory length")
        if len(self.zone_probs) != len(brk):
            raise DomainError("need one packet probability per zone")
        if any(not 0.0 <= p <= 1.0 for p in self.zone_probs):
            raise DomainError("packet probabilities must lie in [0, 1]")

    @property
    def length(self) -> float:
        return self._cum[-1]

    @property
    def n_zones(self) -> int:
        return len(self.zone_breaks)

    @property
    def x_max(self) -> float:
        return max(x for x, _ in self.waypoints)

    @property
    def y_max(self) -> float:
        return max(y for _, y in self.waypoints)

    def _segment(self, i):
        a = self.waypoints[i]
        b = self.waypoints[(i + 1) % len(self.waypoints)]
        return a, b


@dataclass(frozen=True)
class RewardParams:
    """Weights of the speed reward and the battery-replacement reward.

    Defaults follow the simulation table with ``c1..c5`` read as
    ``c, w3, w5, w4, w6``.
    """

    omega: float = 1.0
    w1: float = 1.0
    w2: float = 0.3226
    c: float = 5.0
    w3: float = 0.5
    w4: float = 0.022
    w5: float = 0.5
    w6: float = 0.2

    def __post_init__(self):
        if self.omega < 0 or min(self.w1, self.w2, self.w3, self.w5) < 0:
            raise DomainError("omega, w1, w2, w3, w5 must be non-negative")
        if self.w4 <= 0 or self.w6 <= 0:
            raise DomainError("w4 and w6 must be positive")


@dataclass(frozen=True)
class EnvConfig:
    trajectory: TrajectorySpec
    station: tuple = (0.0, 0.0)
    slot_duration: float = 1.0
    speeds: tuple = (1.0, 3.0, 5.0)
    costs: tuple = (2, 3, 4)
    E: int = 300
    t_b: int = 10
    v_r: float = 1.0
    reward: RewardParams = field(default_factory=RewardParams)

    def __post_init__(self):
        object.__setattr__(self, "station", tuple(float(v) for v in self.station))
        object.__setattr__(self, "speeds", tuple(float(v) for v in self.speeds))
        object.__setattr__(self, "costs", tuple(int(m) for m in self.costs))
        if len(self.speeds) != len(self.costs) or not self.speeds:
            raise DomainError("speeds and costs must be non-empty and equally long")
        if any(a >= b for a, b in zip(self.speeds[:-1], self.speeds[1:])):
            raise DomainError("speeds must be ascending")
        if any(a > b for a, b in zip(self.costs[:-1], self.costs[1:])):
            raise DomainError("costs must be non-decreasing")
        if min(self.costs) < 1:
            raise DomainError("every speed must cost at least one energy unit")
        if self.E < max(self.costs):
            raise DomainError("E must cover the most expensive speed")
        if self.t_b < 1 or self.v_r <= 0 or self.slot_duration <= 0:
            raise DomainError("t_b >= 1, v_r > 0 and slot_duration > 0 required")

    @property
    def n_speeds(self) -> int:
        return len(self.speeds)

    @property
    def n_actions(self) -> int:
        """Number of learnable actions: battery replacement plus each speed."""
        return len(self.speeds) + 1


class Mode(enum.Enum):
    WORKING = "working"
    REPLENISHING = "replenishing"


class Event(enum.Enum):
    NORMAL = "normal"
    VOLUNTARY_RETURN = "voluntary_return"
    FORCED_RETURN = "forced_return"
    IDLE = "idle"


@dataclass(frozen=True)
class UavState:
    mode: Mode
    arc_pos: float
    energy: int
    remaining_idle: Optional[int] = None
    resume_arc: Optional[float] = None

    @classmethod
    def working(cls, arc_pos: float, energy: int) -> "UavState":
        return cls(Mode.WORKING, float(arc_pos), int(energy))

    @property
    def is_working(self) -> bool:
        return self.mode is Mode.WORKING


@dataclass(frozen=True)
class StepOutcome:
    next: UavState
    reward: float
    packets: int
    energy_spent: int
    elapsed_slots: int
    event: Event


@dataclass(frozen=True)
class Experience:
    """One learner transition; a replenishment is compressed into one entry."""

    state_features: tuple
    action: int
    reward: float
    next_features: tuple
    elapsed_slots: int = 1
    origin_distance: float = math.nan


# -- geometry -----------------------------------------------------------------

def _check_arc(traj: TrajectorySpec, arc: float) -> None:
    if not 0.0 <= arc < traj.length:
        raise DomainError(f"arc {arc} outside [0, {traj.length})")


def position_at(traj: TrajectorySpec, arc: float) -> tuple:
    _check_arc(traj, arc)
    cum = traj._cum
    i = bisect.bisect_right(cum, arc) - 1
    (x0, y0), (x1, y1) = traj._segment(i)
    frac = (arc - cum[i]) / (cum[i + 1] - cum[i])
    return (x0 + frac * (x1 - x0), y0 + frac * (y1 - y0))


def zone_of(traj: TrajectorySpec, arc: float) -> int:
    _check_arc(traj, arc)
    return bisect.bisect_right(traj.zone_breaks, arc) - 1


def distance_to_station(cfg: EnvConfig, arc: float) -> float:
    return math.dist(position_at(cfg.trajectory, arc), cfg.station)


def replenish_duration(cfg: EnvConfig, l: float) -> int:
    """Slots needed to fly back ``l`` meters, swap the battery and fly out."""
    if l < 0:
        raise DomainError("distance must be non-negative")
    t_f = math.ceil(l / (cfg.v_r * cfg.slot_duration))
    return 2 * t_f + cfg.t_b


# -- rewards ------------------------------------------------------------------

def speed_reward(rp: RewardParams, d: int, m: float) -> float:
    return rp.omega + rp.w1 * d - rp.w2 * m


def battery_reward(rp: RewardParams, e: float, l: float) -> float:
    return rp.c - rp.w3 * math.exp(rp.w4 * e) - rp.w5 * math.exp(rp.w6 * l)


# -- dynamics -----------------------------------------------------------------

def feasible_actions(cfg: EnvConfig, s: UavState) -> frozenset:
    if not s.is_working:
        return frozenset({IDLE})
    return frozenset({BATTERY} | {a for a, m in enumerate(cfg.costs, 1) if m <= s.energy})


def sample_packet(p: float, rng: np.random.Generator) -> int:
    return int(rng.random() < p)


def _validate_state(cfg: EnvConfig, s: UavState) -> None:
    if s.is_working:
        _check_arc(cfg.trajectory, s.arc_pos)
        if not 0 <= s.energy <= cfg.E:
            raise DomainError(f"energy {s.energy} outside [0, {cfg.E}]")
        if s.remaining_idle is not None:
            raise DomainError("working state cannot carry an idle counter")
    else:
        if s.remaining_idle is None or s.remaining_idle < 1 or s.resume_arc is None:
            raise DomainError("replenishing state needs remaining_idle >= 1 and resume_arc")


def step(cfg: EnvConfig, s: UavState, a: int, rng: np.random.Generator) -> StepOutcome:
    """Advance the simulation by one slot.

    ``elapsed_slots`` is the number of slots the decision accounts for: a
    return reports the whole replenishment, whose idle slots are then played
    out by ``a = -1`` steps that report 1 each.
    """
    _validate_state(cfg, s)
    if a not in feasible_actions(cfg, s):
        raise ContractViolation(f"action {a} is not feasible in {s}")
    traj = cfg.trajectory

    if a == IDLE:
        left = s.remaining_idle - 1
        if left == 0:
            nxt = UavState.working(s.resume_arc, cfg.E)
        else:
            nxt = UavState(Mode.REPLENISHING, s.arc_pos, s.energy, left, s.resume_arc)
        return StepOutcome(nxt, 0.0, 0, 0, 1, Event.IDLE)

    if a == BATTERY:
        l = distance_to_station(cfg, s.arc_pos)
        r = battery_reward(cfg.reward, s.energy, l)
        t_e = replenish_duration(cfg, l)
        if t_e == 1:
            nxt = UavState.working(s.arc_pos, cfg.E)
        else:
            nxt = UavState(Mode.REPLENISHING, s.arc_pos, s.energy, t_e - 1, s.arc_pos)
        return StepOutcome(nxt, r, 0, 0, t_e, Event.VOLUNTARY_RETURN)

    m = cfg.costs[a - 1]
    d = sample_packet(traj.zone_probs[zone_of(traj, s.arc_pos)], rng)
    arc = (s.arc_pos + cfg.speeds[a - 1] * cfg.slot_duration) % traj.length
    e = s.energy - m
    r = speed_reward(cfg.reward, d, m)
    if e < min(cfg.costs):
        t_e = replenish_duration(cfg, distance_to_station(cfg, arc))
        nxt = UavState(Mode.REPLENISHING, arc, e, t_e, arc)
        return StepOutcome(nxt, r, d, m, 1 + t_e, Event.FORCED_RETURN)
    return StepOutcome(UavState.working(arc, e), r, d, m, 1, Event.NORMAL)


# -- state encodings ----------------------------------------------------------

def state_features(cfg: EnvConfig, s: UavState) -> tuple:
    """Normalized ``(x/X, y/Y, e/E)``; a zero-extent axis maps to 0."""
    if not s.is_working:
        raise DomainError("the replenishing state has no feature encoding")
    x, y = position_at(cfg.trajectory, s.arc_pos)
    X, Y = cfg.trajectory.x_max, cfg.trajectory.y_max
    return (x / X if X > 0 else 0.0, y / Y if Y > 0 else 0.0, s.energy / cfg.E)


def discrete_state(cfg: EnvConfig, s: UavState) -> tuple:
    """Integer grid state ``(x, y, e)``; replenishing maps to ``(-1, -1, -1)``."""
    if not s.is_working:
        return (-1, -1, -1)
    x, y = position_at(cfg.trajectory, s.arc_pos)
    return (int(round(x)), int(round(y)), int(s.energy))


# -- slot-accurate environment wrapper ----------------------------------------

@dataclass
class Transition:
    """A decision and everything it caused up to the next decision."""

    state: UavState
    action: int
    reward: float
    next: UavState
    elapsed_slots: int
    packets: int
    energy_spent: int
    event: Event
    origin_distance: float


class UavEnv:
    """Owns one UAV, its random stream and the running slot totals.

    ``decide`` plays one working-state action and then every idle slot of a
    resulting replenishment, so each call ends in a working state.
    """

    def __init__(self, cfg: EnvConfig, rng: np.random.Generator, start_arc: float = 0.0):
        self.cfg = cfg
        self.rng = rng
        self.state = UavState.working(start_arc, cfg.E)
        self.slots = 0
        self.reward_sum = 0.0
        self.packets = 0
        self.energy_used = 0

    def feasible(self, s: Optional[UavState] = None) -> frozenset:
        return feasible_actions(self.cfg, self.state if s is None else s)

    def state_key(self, s: Optional[UavState] = None) -> tuple:
        return discrete_state(self.cfg, self.state if s is None else s)

    def features(self, s: Optional[UavState] = None) -> tuple:
        return state_features(self.cfg, self.state if s is None else s)

    def decide(self, a: int) -> Transition:
        s = self.state
        dist = distance_to_station(self.cfg, s.arc_pos)
        out = step(self.cfg, s, a, self.rng)
        self.slots += 1
        self.reward_sum += out.reward
        self.packets += out.packets
        self.energy_used += out.energy_spent
        nxt = out.next
        while not nxt.is_working:
            nxt = step(self.cfg, nxt, IDLE, self.rng).next
            self.slots += 1
        self.state = nxt
        return Transition(s, a, out.reward, nxt, out.elapsed_slots, out.packets,
                          out.energy_spent, out.event, dist)

    def experience(self, tr: Transition) -> Experience:
        return Experience(self.features(tr.state), tr.action, tr.reward,
                          self.features(tr.next), tr.elapsed_slots, tr.origin_distance)

    @property
    def average_reward(self) -> float:
        return self.reward_sum / self.slots if self.slots else 0.0

    @property
    def throughput(self) -> float:
        return self.packets / self.slots if self.slots else 0.0

    @property
    def energy_per_slot(self) -> float:
        return self.energy_used / self.slots if self.slots else 0.0


# -- configuration files ------------------------------------------------------

_TOP_KEYS = {"trajectory", "station", "slot_duration", "speeds", "costs", "E", "t_b", "v_r", "reward"}
_TRAJ_KEYS = {"waypoints", "closed", "zone_breaks", "zone_probs"}
_REWARD_KEYS = {"omega", "w1", "w2", "c", "w3", "w4", "w5", "w6"}


def _reject_unknown(d: Mapping, allowed: set, where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise DomainError(f"unknown keys in {where}: {sorted(extra)}")


def config_from_dict(d: Mapping[str, Any], base: Optional[EnvConfig] = None) -> EnvConfig:
    """Build an EnvConfig from a mapping; missing keys fall back to ``base``.

    Without a base every key except ``reward`` members is required.
    """
    _reject_unknown(d, _TOP_KEYS, "config")
    cur = config_to_dict(base) if base is not None else {}
    traj = dict(cur.get("trajectory", {}))
    if "trajectory" in d:
        _reject_unknown(d["trajectory"], _TRAJ_KEYS, "trajectory")
        traj.update(d["trajectory"])
    rew = dict(cur.get("reward", {}))
    if "reward" in d:
        _reject_unknown(d["reward"], _REWARD_KEYS, "reward")
        rew.update(d["reward"])
    merged = {**cur, **{k: v for k, v in d.items() if k not in ("trajectory", "reward")}}
    missing = (_TOP_KEYS - {"trajectory", "reward"}) - set(merged)
    missing |= {f"trajectory.{k}" for k in _TRAJ_KEYS - set(traj)}
    if missing:
        raise DomainError(f"missing config keys: {sorted(missing)}")
    return EnvConfig(
        trajectory=TrajectorySpec(
            waypoints=tuple(tuple(p) for p in traj["waypoints"]),
            closed=bool(traj["closed"]),
            zone_breaks=tuple(traj["zone_breaks"]),
            zone_probs=tuple(traj["zone_probs"]),
        ),
        station=tuple(merged["station"]),
        slot_duration=float(merged["slot_duration"]),
        speeds=tuple(merged["speeds"]),
        costs=tuple(merged["costs"]),
        E=int(merged["E"]),
        t_b=int(merged["t_b"]),
        v_r=float(merged["v_r"]),
        reward=RewardParams(**rew),
    )


def config_to_dict(cfg: EnvConfig) -> dict:
    t = cfg.trajectory
    rp = cfg.reward
    return {
        "trajectory": {
            "waypoints": [list(p) for p in t.waypoints],
            "closed": t.closed,
            "zone_breaks": list(t.zone_breaks),
            "zone_probs": list(t.zone_probs),
        },
        "station": list(cfg.station),
        "slot_duration": cfg.slot_duration,
        "speeds": list(cfg.speeds),
        "costs": list(cfg.costs),
        "E": cfg.E,
        "t_b": cfg.t_b,
        "v_r": cfg.v_r,
        "reward": {k: getattr(rp, k) for k in ("omega", "w1", "w2", "c", "w3", "w4", "w5", "w6")},
    }


def load_config(path, base: Optional[EnvConfig] = None) -> EnvConfig:
    """Read a YAML (or JSON) scenario file."""
    with open(Path(path)) as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data, base)


def dump_config(cfg: EnvConfig, path) -> None:
    with open(Path(path), "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
