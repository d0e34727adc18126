"""Knowledge transfer between scenarios and the metrics that score it."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import neural
from .d3ql import (Agent, ReplayBuffer, load_experiences, save_experiences)
from .env import Experience
from .errors import ContractViolation, DomainError
from .metrics import MetricTrace
from .neural import DuelingNet

ET = "et"
PT = "pt"
HYBRID = "hybrid"


@dataclass(frozen=True)
class TransferMode:
    variant: str
    count: int = 0
    station_radius: float = 20.0

    def __post_init__(self):
        if self.variant not in (ET, PT, HYBRID):
            raise DomainError(f"unknown transfer variant {self.variant!r}")
        if self.variant != PT and self.count < 1:
            raise DomainError("experience transfer needs count >= 1")

    @classmethod
    def experience(cls, count: int, **kw) -> "TransferMode":
        return cls(ET, count, **kw)

    @classmethod
    def policy(cls) -> "TransferMode":
        return cls(PT)

    @classmethod
    def hybrid(cls, count: int, **kw) -> "TransferMode":
        return cls(HYBRID, count, **kw)

    @property
    def uses_policy(self) -> bool:
        return self.variant in (PT, HYBRID)

    @property
    def uses_experience(self) -> bool:
        return self.variant in (ET, HYBRID)


@dataclass
class SourceKnowledge:
    """Source-agent parameters plus its experiences, each tagged with the
    distance to the station where it started."""

    params: Optional[DuelingNet]
    pool: List[Experience]

    def save(self, ckpt_path, exp_path) -> None:
        if self.params is not None:
            neural.save_net(self.params, ckpt_path)
        save_experiences(self.pool, exp_path, with_distance=True)

    @classmethod
    def load(cls, ckpt_path=None, exp_path=None) -> "SourceKnowledge":
        params = neural.load_net(ckpt_path) if ckpt_path is not None else None
        pool = load_experiences(exp_path) if exp_path is not None else []
        return cls(params, pool)


@dataclass(frozen=True)
class TlMetrics:
    jump_start: float
    asymptotic_gain: float
    time_to_threshold: Optional[int]
    baseline_time_to_threshold: Optional[int]
    jump_start_ratio: float
    asymptotic_ratio: float


def select_experiences(pool: Sequence[Experience], station_radius: float, count: int) -> List[Experience]:
    """Up to ``count`` experiences that began within ``station_radius`` of the
    station, nearest first (ties keep pool order)."""
    if count < 1:
        raise ContractViolation("count must be >= 1")
    near = [e for e in pool if e.origin_distance <= station_radius]
    near.sort(key=lambda e: e.origin_distance)
    return near[:count]


def apply_transfer(agent: Agent, buf: ReplayBuffer, know: SourceKnowledge, mode: TransferMode) -> None:
    if mode.uses_policy:
        if know.params is None:
            raise ContractViolation("policy transfer needs source parameters")
        src = [p.shape for p in know.params.params()]
        if src != [p.shape for p in agent.q_net.params()] or know.params.aggregator != agent.q_net.aggregator:
            raise ContractViolation("source network architecture does not match the agent")
        agent.q_net = neural.clone_params(know.params)
        agent.target_net = neural.clone_params(know.params)
    if mode.uses_experience:
        for e in select_experiences(know.pool, mode.station_radius, min(mode.count, buf.capacity)):
            buf.push(e)


def _window_mean(values, window: int, tail: bool) -> float:
    v = np.asarray(values, dtype=np.float64)
    if window < 1 or window > len(v):
        raise ContractViolation(f"window {window} does not fit a trace of length {len(v)}")
    return float(v[-window:].mean() if tail else v[:window].mean())


def _series(trace) -> Sequence[float]:
    return trace.avg_reward if isinstance(trace, MetricTrace) else trace


def jump_start(tl_trace, base_trace, window: int = 10) -> float:
    return _window_mean(_series(tl_trace), window, False) - _window_mean(_series(base_trace), window, False)


def asymptotic_gain(tl_trace, base_trace, tail_window: int = 20) -> float:
    return _window_mean(_series(tl_trace), tail_window, True) - _window_mean(_series(base_trace), tail_window, True)


def time_to_threshold(trace, theta: float) -> Optional[int]:
    for i, v in enumerate(_series(trace)):
        if v >= theta:
            return i
    return None


def _ratio(a: float, b: float) -> float:
    return a / b if b != 0 else math.nan


def tl_metrics(tl_trace, base_trace, theta: float, window: int = 10, tail_window: int = 20) -> TlMetrics:
    """All three metrics; ratios are of window means (TL / baseline)."""
    tl, base = _series(tl_trace), _series(base_trace)
    return TlMetrics(
        jump_start=jump_start(tl, base, window),
        asymptotic_gain=asymptotic_gain(tl, base, tail_window),
        time_to_threshold=time_to_threshold(tl, theta),
        baseline_time_to_threshold=time_to_threshold(base, theta),
        jump_start_ratio=_ratio(_window_mean(tl, window, False), _window_mean(base, window, False)),
        asymptotic_ratio=_ratio(_window_mean(tl, tail_window, True), _window_mean(base, tail_window, True)),
    )
