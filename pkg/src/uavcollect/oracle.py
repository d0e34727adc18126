"""Brute-force reference solvers used to check the learners.

``ToyMDP`` + ``value_iteration`` give exact discounted Q-values for a small
semi-Markov decision process (each transition may last several slots).
``optimal_average_reward`` computes the best achievable long-run reward per
slot of a UAV scenario by exhaustive search over the deterministic flight
dynamics, with packets replaced by their expectation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .env import (EnvConfig, battery_reward, distance_to_station, replenish_duration,
                  zone_of)
from .errors import DomainError

# (probability, next state, reward, elapsed slots)
Outcome = Tuple[float, int, float, int]


@dataclass
class _ToyTransition:
    reward: float
    elapsed_slots: int
    packets: int = 0
    energy_spent: int = 0


class ToyMDP:
    """Finite MDP with stochastic multi-slot transitions.

    Exposes the same ``state_key / feasible / decide`` surface as
    :class:`uavcollect.env.UavEnv` so the tabular learner runs on it unchanged.
    """

    def __init__(self, table: Dict[Tuple[int, int], List[Outcome]], n_states: int, n_actions: int,
                 rng: np.random.Generator, start: int = 0):
        for (s, a), outs in table.items():
            if abs(sum(o[0] for o in outs) - 1.0) > 1e-12:
                raise DomainError(f"probabilities of ({s}, {a}) do not sum to 1")
        self.table = table
        self.n_states = n_states
        self.n_actions = n_actions
        self.rng = rng
        self.state = start
        self.slots = 0
        self.reward_sum = 0.0
        self.packets = 0
        self.energy_used = 0

    def state_key(self, s=None):
        return (self.state if s is None else s,)

    def feasible(self, s=None):
        return frozenset(range(self.n_actions))

    def decide(self, a: int) -> _ToyTransition:
        outs = self.table[self.state, a]
        k = int(self.rng.choice(len(outs), p=[o[0] for o in outs]))
        _, nxt, r, elapsed = outs[k]
        self.state = nxt
        self.slots += elapsed
        self.reward_sum += r
        return _ToyTransition(r, elapsed)

    @property
    def average_reward(self):
        return self.reward_sum / self.slots if self.slots else 0.0

    throughput = 0.0
    energy_per_slot = 0.0


def value_iteration(table, n_states: int, n_actions: int, zeta: float, tol: float = 1e-12,
                    max_iter: int = 100_000) -> np.ndarray:
    """Fixed point of ``Q(s,a) = sum p * (r + zeta**k * max Q(s', .))``."""
    Q = np.zeros((n_states, n_actions))
    for _ in range(max_iter):
        V = Q.max(axis=1)
        new = np.zeros_like(Q)
        for (s, a), outs in table.items():
            new[s, a] = sum(p * (r + zeta ** k * V[s2]) for p, s2, r, k in outs)
        if np.max(np.abs(new - Q)) < tol:
            return new
        Q = new
    return Q


def _expected_dynamics(cfg: EnvConfig):
    """Decision graph over integer ``(arc, energy)`` states.

    Returns per-action arrays of expected reward, slots consumed and successor
    index; infeasible actions carry ``-inf`` reward.
    """
    t = cfg.trajectory
    L = t.length
    steps = [v * cfg.slot_duration for v in cfg.speeds]
    if L != int(L) or any(s != int(s) for s in steps):
        raise DomainError("exhaustive search needs integer arc steps")
    L = int(L)
    E = cfg.E
    n = L * (E + 1)
    arcs = np.repeat(np.arange(L), E + 1)
    es = np.tile(np.arange(E + 1), L)
    dist = np.array([distance_to_station(cfg, float(a)) for a in range(L)])
    p = np.array([t.zone_probs[zone_of(t, float(a))] for a in range(L)])
    t_e = np.array([replenish_duration(cfg, d) for d in dist])
    rp = cfg.reward
    m_min = min(cfg.costs)

    W = np.full((cfg.n_actions, n), -np.inf)
    T = np.ones((cfg.n_actions, n))
    N = np.zeros((cfg.n_actions, n), dtype=np.int64)
    W[0] = [battery_reward(rp, e, dist[a]) for a, e in zip(arcs, es)]
    T[0] = t_e[arcs]
    N[0] = arcs * (E + 1) + E
    for k, (step, m) in enumerate(zip(steps, cfg.costs), start=1):
        ok = es >= m
        a2 = (arcs + int(step)) % L
        e2 = es - m
        forced = e2 < m_min
        W[k, ok] = rp.omega + rp.w1 * p[arcs[ok]] - rp.w2 * m
        T[k] = np.where(forced, 1 + t_e[a2], 1)
        N[k] = np.where(forced, a2 * (E + 1) + E, a2 * (E + 1) + np.maximum(e2, 0))
    return W, T, N


def _cycle_gain(W, T, N, rho, burn=3000, probe=500):
    h = np.zeros(W.shape[1])
    G = W - rho * T
    for _ in range(burn):
        h = np.max(G + h[N], axis=0)
    h0 = h.copy()
    for _ in range(probe):
        h = np.max(G + h[N], axis=0)
    return float((h - h0).max()) / probe


def optimal_average_reward(cfg: EnvConfig, tol: float = 1e-4, hi: float = 2.0) -> Tuple[float, float]:
    """Bracket ``(lo, hi)`` on the best long-run expected reward per slot.

    Packets do not influence motion, so the optimum equals the best
    reward-to-time ratio over cycles of the deterministic decision graph; the
    ratio is found by bisection on the sign of the max-plus growth rate.
    """
    W, T, N = _expected_dynamics(cfg)
    lo = 0.0 if _cycle_gain(W, T, N, 0.0) > 0 else -hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _cycle_gain(W, T, N, mid) > 1e-9:
            lo = mid
        else:
            hi = mid
    return lo, hi
