"""Tabular Q-learning over the integer ``(x, y, e)`` grid."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .errors import ContractViolation, DomainError
from .metrics import MetricTrace

QTAB_HEADER = "QTAB v1"


@dataclass(frozen=True)
class LinearEpsilon:
    """Linear decay from ``start`` to ``end`` over ``decay_steps``, flat after."""

    start: float = 1.0
    end: float = 0.01
    decay_steps: int = 100_000

    def __post_init__(self):
        if not self.start >= self.end >= 0:
            raise DomainError("need start >= end >= 0")
        if self.decay_steps < 0:
            raise DomainError("decay_steps must be non-negative")

    def __call__(self, step: int) -> float:
        if self.decay_steps == 0 or step >= self.decay_steps:
            return self.end
        return self.start + (self.end - self.start) * step / self.decay_steps


class QTable:
    """Sparse Q-table; unseen entries read as 0.

    ``bounds`` is ``(X, Y, E, n_actions)`` and, when given, every written key
    must lie on the grid.
    """

    def __init__(self, n_actions: int, bounds: Optional[tuple] = None):
        self.n_actions = n_actions
        self.bounds = bounds
        self._rows = defaultdict(lambda: np.zeros(n_actions))

    def _check(self, s):
        if self.bounds is None:
            return
        X, Y, E = self.bounds[:3]
        x, y, e = s
        if not (0 <= x <= X and 0 <= y <= Y and 0 <= e <= E):
            raise DomainError(f"state {s} off the grid")

    def row(self, s) -> np.ndarray:
        return self._rows[s] if s in self._rows else np.zeros(self.n_actions)

    def get(self, s, a: int) -> float:
        return float(self.row(s)[a])

    def set(self, s, a: int, value: float) -> None:
        if not 0 <= a < self.n_actions:
            raise DomainError(f"action {a} out of range")
        self._check(s)
        self._rows[s][a] = value

    def max_over(self, s, feasible) -> float:
        row = self.row(s)
        return max(row[a] for a in feasible)

    def items(self):
        """``((x, y, e, a), value)`` pairs in lexicographic key order."""
        for s in sorted(self._rows):
            for a, v in enumerate(self._rows[s]):
                yield (*s, a), float(v)

    def __len__(self) -> int:
        return len(self._rows)

    def save(self, path) -> None:
        lines = [QTAB_HEADER]
        lines += [" ".join(map(str, k)) + " " + format(v, ".17g") for k, v in self.items()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, n_actions: int, bounds: Optional[tuple] = None) -> "QTable":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != QTAB_HEADER:
            raise DomainError("not a QTAB v1 file")
        q = cls(n_actions, bounds)
        for ln in lines[1:]:
            *key, a, v = ln.split()
            q.set(tuple(int(k) for k in key), int(a), float(v))
        return q


def epsilon_greedy(q_row, feasible, eps: float, rng: np.random.Generator) -> int:
    acts = sorted(feasible)
    if not acts:
        raise ContractViolation("no feasible action")
    if eps > 0 and rng.random() < eps:
        return acts[int(rng.integers(len(acts)))]
    best = acts[0]
    for a in acts[1:]:
        if q_row[a] > q_row[best]:
            best = a
    return best


def q_update(Q: QTable, s, a: int, r: float, s_next, next_feasible, elapsed: int,
             beta: float, zeta: float) -> float:
    """One Q-learning update with ``zeta ** elapsed`` discounting; returns Q(s, a)."""
    if elapsed < 1:
        raise ContractViolation("elapsed_slots must be >= 1")
    old = Q.get(s, a)
    target = r + zeta ** elapsed * Q.max_over(s_next, next_feasible)
    new = old + beta * (target - old)
    Q.set(s, a, new)
    return new


@dataclass
class TabularParams:
    """``beta`` is a constant rate, or ``"harmonic"`` for ``1/(n+1)**beta_power``
    per state-action visit count ``n``."""

    beta: Union[float, str] = 0.1
    zeta: float = 0.9
    epsilon: LinearEpsilon = field(default_factory=LinearEpsilon)
    total_steps: int = 150_000
    checkpoint_every: int = 500
    beta_power: float = 1.0

    def __post_init__(self):
        if isinstance(self.beta, str):
            if self.beta != "harmonic":
                raise DomainError(f"unknown beta schedule {self.beta!r}")
            if not 0.5 < self.beta_power <= 1.0:
                raise DomainError("beta_power must lie in (0.5, 1]")
        elif not 0 <= self.beta < 1:
            raise DomainError("beta must lie in [0, 1)")
        if not 0 <= self.zeta <= 1:
            raise DomainError("zeta must lie in [0, 1]")


def train_tabular(env, params: TabularParams, rng: np.random.Generator, n_actions: Optional[int] = None,
                  bounds: Optional[tuple] = None):
    """Epsilon-greedy Q-learning for ``params.total_steps`` decisions.

    ``env`` needs ``state_key()``, ``feasible(state=None)`` and ``decide(a)``
    (see :class:`uavcollect.env.UavEnv`).  Returns ``(QTable, MetricTrace)``.
    """
    if n_actions is None:
        n_actions = env.cfg.n_actions
    if bounds is None and hasattr(env, "cfg"):
        t = env.cfg.trajectory
        bounds = (math.ceil(t.x_max), math.ceil(t.y_max), env.cfg.E, n_actions)
    Q = QTable(n_actions, bounds)
    visits = defaultdict(int)
    trace = MetricTrace()
    for t in range(params.total_steps):
        s = env.state_key()
        a = epsilon_greedy(Q.row(s), env.feasible(), params.epsilon(t), rng)
        tr = env.decide(a)
        if params.beta == "harmonic":
            visits[s, a] += 1
            beta = 1.0 / (visits[s, a] + 1) ** params.beta_power
        else:
            beta = params.beta
        q_update(Q, s, a, tr.reward, env.state_key(), env.feasible(), tr.elapsed_slots,
                 beta, params.zeta)
        if (t + 1) % params.checkpoint_every == 0:
            trace.record(t + 1, env)
    return Q, trace


def greedy_policy(Q: QTable):
    """Map a state key and feasible set to the greedy action."""
    def act(s, feasible):
        return epsilon_greedy(Q.row(s), feasible, 0.0, None)
    return act
