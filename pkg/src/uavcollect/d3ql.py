"""Deep dueling double Q-learning: replay memory, double-Q targets, training loop."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import neural
from .env import BATTERY, EnvConfig, Experience, UavEnv
from .errors import ContractViolation, DomainError, NotReady
from .metrics import MetricTrace
from .neural import DuelingNet, NetConfig
from .tabular import LinearEpsilon

EXP_HEADER = "EXP v1"
EXPD_HEADER = "EXP-D v1"


class ReplayBuffer:
    """Bounded FIFO of experiences backed by preallocated arrays."""

    def __init__(self, capacity: int, n_features: int = 3):
        if capacity < 1:
            raise DomainError("capacity must be positive")
        self.capacity = capacity
        self.S = np.zeros((capacity, n_features))
        self.A = np.zeros(capacity, dtype=np.int64)
        self.R = np.zeros(capacity)
        self.S2 = np.zeros((capacity, n_features))
        self.K = np.zeros(capacity, dtype=np.int64)
        self.dist = np.full(capacity, np.nan)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, exp: Experience) -> None:
        i = self._next
        self.S[i] = exp.state_features
        self.A[i] = exp.action
        self.R[i] = exp.reward
        self.S2[i] = exp.next_features
        self.K[i] = exp.elapsed_slots
        self.dist[i] = exp.origin_distance
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _get(self, i: int) -> Experience:
        return Experience(tuple(self.S[i].tolist()), int(self.A[i]), float(self.R[i]),
                          tuple(self.S2[i].tolist()), int(self.K[i]), float(self.dist[i]))

    def entries(self) -> List[Experience]:
        """Contents from oldest to newest."""
        start = (self._next - self.size) % self.capacity
        return [self._get((start + j) % self.capacity) for j in range(self.size)]

    def sample_indices(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if k < 1:
            raise ContractViolation("sample size must be positive")
        if self.size < k:
            raise NotReady(f"buffer holds {self.size} < {k} entries")
        return rng.integers(0, self.size, size=k)

    def sample(self, k: int, rng: np.random.Generator) -> List[Experience]:
        return [self._get(int(i)) for i in self.sample_indices(k, rng)]


@dataclass
class D3qlConfig:
    zeta: float = 0.9
    alpha: float = 1e-4
    batch_size: int = 32
    capacity: int = 100_000
    sync_interval: int = 10_000
    epsilon: LinearEpsilon = field(default_factory=LinearEpsilon)
    total_steps: int = 150_000
    action_mask_by_energy: bool = True
    checkpoint_every: int = 500
    net: NetConfig = field(default_factory=NetConfig)
    # None trains on the exact squared loss
    td_clip: Optional[float] = 10.0
    # exploration once a source policy has been copied in; None keeps ``epsilon``
    transfer_epsilon: Optional[LinearEpsilon] = None

    def __post_init__(self):
        if self.batch_size > self.capacity:
            raise DomainError("batch_size cannot exceed capacity")
        if self.sync_interval < 1:
            raise DomainError("sync_interval must be >= 1")
        if not 0 <= self.zeta <= 1:
            raise DomainError("zeta must lie in [0, 1]")


class Agent:
    """Online and target dueling networks plus the action-masking rules."""

    def __init__(self, q_net: DuelingNet, target_net: DuelingNet, costs: Sequence[int], E: int,
                 mask_battery_action: bool = False, action_mask_by_energy: bool = True):
        if [p.shape for p in q_net.params()] != [p.shape for p in target_net.params()]:
            raise ContractViolation("online and target networks differ in shape")
        self.q_net = q_net
        self.target_net = target_net
        self.costs = np.asarray(costs)
        self.E = E
        self.mask_battery_action = mask_battery_action
        self.action_mask_by_energy = action_mask_by_energy
        self.steps_done = 0
        self.epsilon = 1.0

    @classmethod
    def fresh(cls, cfg: EnvConfig, net_cfg: NetConfig, rng: np.random.Generator, **kw) -> "Agent":
        if net_cfg.n_actions != cfg.n_actions:
            net_cfg = NetConfig(**{**net_cfg.__dict__, "n_actions": cfg.n_actions})
        q = neural.init_params(net_cfg, rng)
        return cls(q, neural.clone_params(q), cfg.costs, cfg.E, **kw)

    @property
    def n_actions(self) -> int:
        return self.q_net.n_actions

    def next_masks(self, next_features: np.ndarray) -> np.ndarray:
        """Boolean ``(n, n_actions)`` mask of actions allowed at next states."""
        n = next_features.shape[0]
        mask = np.ones((n, self.n_actions), dtype=bool)
        if self.action_mask_by_energy:
            e = np.rint(next_features[:, 2] * self.E)
            mask[:, 1:] = self.costs[None, :] <= e[:, None]
        if self.mask_battery_action:
            mask[:, BATTERY] = False
        return mask

    def greedy_action(self, features, feasible) -> int:
        acts = sorted(feasible)
        if not acts:
            raise ContractViolation("no feasible action")
        q = neural.q_values(self.q_net, features)
        best = acts[0]
        for a in acts[1:]:
            if q[a] > q[best]:
                best = a
        return best

    def allowed(self, feasible) -> frozenset:
        if self.mask_battery_action:
            return frozenset(feasible) - {BATTERY}
        return frozenset(feasible)

    def act(self, features, feasible, eps: float, rng: np.random.Generator) -> int:
        acts = sorted(self.allowed(feasible))
        if eps > 0 and rng.random() < eps:
            return acts[int(rng.integers(len(acts)))]
        return self.greedy_action(features, acts)


def double_q_targets(agent: Agent, rewards, next_features, elapsed, zeta: float) -> np.ndarray:
    """``r + zeta**k * Qtarget(s', argmax_a Qonline(s', a))`` for a batch."""
    S2 = np.atleast_2d(np.asarray(next_features, dtype=np.float64))
    r = np.asarray(rewards, dtype=np.float64)
    k = np.asarray(elapsed)
    q_online = neural.q_values(agent.q_net, S2)
    q_online = np.where(agent.next_masks(S2), q_online, -np.inf)
    best = np.argmax(q_online, axis=1)
    q_eval = neural.q_values(agent.target_net, S2)[np.arange(S2.shape[0]), best]
    return r + np.power(zeta, k) * q_eval


def double_q_target(agent: Agent, exp: Experience, zeta: float) -> float:
    return float(double_q_targets(agent, [exp.reward], [exp.next_features],
                                  [exp.elapsed_slots], zeta)[0])


def sync_target(agent: Agent) -> None:
    neural.copy_into(agent.target_net, agent.q_net)


def learn_step(agent: Agent, buf: ReplayBuffer, cfg: D3qlConfig, rng: np.random.Generator) -> Optional[float]:
    """One SGD step on a uniformly sampled mini-batch; ``None`` while warming up."""
    if len(buf) < cfg.batch_size:
        return None
    idx = buf.sample_indices(cfg.batch_size, rng)
    y = double_q_targets(agent, buf.R[idx], buf.S2[idx], buf.K[idx], cfg.zeta)
    grads, loss = neural.backward(agent.q_net, (buf.S[idx], buf.A[idx], y), cfg.td_clip)
    neural.sgd_step(agent.q_net, grads, cfg.alpha)
    return loss


def train_d3ql(env_cfg: EnvConfig, cfg: D3qlConfig, rng: np.random.Generator, transfer=None,
               mask_battery_action: bool = False,
               recorder: Optional[Callable[[Experience], None]] = None,
               agent: Optional[Agent] = None):
    """Train for ``cfg.total_steps`` decisions and return ``(agent, trace)``.

    ``transfer`` is an optional ``(TransferMode, SourceKnowledge)`` pair
    applied before the first step.  ``recorder`` sees every new experience.
    The environment, network initialization and exploration use independent
    child streams of ``rng`` so equal seeds give equal packet draws across
    algorithms.
    """
    env_rng, init_rng, agent_rng = rng.spawn(3)
    env = UavEnv(env_cfg, env_rng)
    if agent is None:
        agent = Agent.fresh(env_cfg, cfg.net, init_rng, mask_battery_action=mask_battery_action,
                            action_mask_by_energy=cfg.action_mask_by_energy)
    buf = ReplayBuffer(cfg.capacity)
    schedule = cfg.epsilon
    if transfer is not None:
        from .transfer import apply_transfer
        mode, knowledge = transfer
        apply_transfer(agent, buf, knowledge, mode)
        if mode.uses_policy and cfg.transfer_epsilon is not None:
            schedule = cfg.transfer_epsilon

    trace = MetricTrace()
    for t in range(cfg.total_steps):
        agent.epsilon = schedule(t)
        a = agent.act(env.features(), env.feasible(), agent.epsilon, agent_rng)
        tr = env.decide(a)
        exp = env.experience(tr)
        buf.push(exp)
        if recorder is not None:
            recorder(exp)
        learn_step(agent, buf, cfg, agent_rng)
        agent.steps_done += 1
        if agent.steps_done % cfg.sync_interval == 0:
            sync_target(agent)
        if (t + 1) % cfg.checkpoint_every == 0:
            trace.record(t + 1, env)
    return agent, trace


# -- persistence --------------------------------------------------------------

def save_agent(agent: Agent, path) -> None:
    lines = neural.net_to_lines(agent.q_net)
    lines.append(f"steps_done {agent.steps_done} epsilon {format(agent.epsilon, '.17g')}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_agent(path, env_cfg: EnvConfig, mask_battery_action: bool = False,
               action_mask_by_energy: bool = True) -> Agent:
    lines = Path(path).read_text().splitlines()
    net, used = neural.net_from_lines(lines)
    agent = Agent(net, neural.clone_params(net), env_cfg.costs, env_cfg.E,
                  mask_battery_action=mask_battery_action,
                  action_mask_by_energy=action_mask_by_energy)
    if used < len(lines) and lines[used].startswith("steps_done"):
        tok = lines[used].split()
        agent.steps_done = int(tok[1])
        agent.epsilon = float(tok[3])
    return agent


def _exp_line(e: Experience, with_distance: bool) -> str:
    vals = [*e.state_features, e.action, e.reward, *e.next_features, e.elapsed_slots]
    if with_distance:
        vals.append(e.origin_distance)
    return " ".join(str(v) if isinstance(v, (int, np.integer)) else format(float(v), ".17g") for v in vals)


def save_experiences(exps: Sequence[Experience], path, with_distance: bool = False) -> None:
    header = EXPD_HEADER if with_distance else EXP_HEADER
    lines = [header] + [_exp_line(e, with_distance) for e in exps]
    Path(path).write_text("\n".join(lines) + "\n")


def load_experiences(path) -> List[Experience]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] not in (EXP_HEADER, EXPD_HEADER):
        raise DomainError("not an EXP v1 / EXP-D v1 file")
    with_distance = lines[0] == EXPD_HEADER
    out = []
    for ln in lines[1:]:
        t = ln.split()
        dist = float(t[9]) if with_distance else float("nan")
        out.append(Experience((float(t[0]), float(t[1]), float(t[2])), int(t[3]), float(t[4]),
                              (float(t[5]), float(t[6]), float(t[7])), int(t[8]), dist))
    return out
