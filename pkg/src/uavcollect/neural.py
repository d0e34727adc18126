"""Dueling Q-network in plain numpy with hand-written backprop and SGD.

A shared rectifier trunk feeds a value stream (one output) and an advantage
stream (one output per action).  Q-values combine them as
``V + (D - mean(D))`` or ``V + (D - max(D))``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, DomainError

MEAN = "mean"
MAX = "max"
CKPT_HEADER = "D3QL-CKPT v1"


@dataclass
class NetConfig:
    n_inputs: int = 3
    n_actions: int = 4
    trunk: Tuple[int, ...] = (64, 64)
    value_hidden: Tuple[int, ...] = (32,)
    advantage_hidden: Tuple[int, ...] = (32,)
    alpha: float = 1e-4
    aggregator: str = MEAN

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError("step size must be positive")
        if self.aggregator not in (MEAN, MAX):
            raise DomainError(f"unknown aggregator {self.aggregator!r}")


# A layer is a (W, b) pair with W shaped (fan_in, fan_out).
Layer = List[np.ndarray]


@dataclass
class DuelingNet:
    trunk: List[Layer]
    value: List[Layer]
    advantage: List[Layer]
    aggregator: str = MEAN

    def params(self) -> List[np.ndarray]:
        """All parameter arrays in a fixed order (trunk, value, advantage)."""
        return [p for stream in (self.trunk, self.value, self.advantage) for layer in stream for p in layer]

    def dims(self) -> dict:
        def chain(stream):
            return [stream[0][0].shape[0]] + [W.shape[1] for W, _ in stream]
        return {"trunk": chain(self.trunk), "value": chain(self.value),
                "advantage": chain(self.advantage)}

    @property
    def n_actions(self) -> int:
        return self.advantage[-1][0].shape[1]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: NetConfig, rng: np.random.Generator) -> DuelingNet:
    def stream(sizes):
        return [[_glorot(rng, a, b), np.zeros(b)] for a, b in zip(sizes[:-1], sizes[1:])]

    trunk_sizes = [cfg.n_inputs, *cfg.trunk]
    h = trunk_sizes[-1]
    return DuelingNet(
        trunk=stream(trunk_sizes),
        value=stream([h, *cfg.value_hidden, 1]),
        advantage=stream([h, *cfg.advantage_hidden, cfg.n_actions]),
        aggregator=cfg.aggregator,
    )


def clone_params(src: DuelingNet) -> DuelingNet:
    return copy.deepcopy(src)


def copy_into(dst: DuelingNet, src: DuelingNet) -> None:
    """Overwrite ``dst``'s parameters with ``src``'s (shapes must agree)."""
    _check_congruent(dst.params(), src.params())
    for d, s in zip(dst.params(), src.params()):
        d[...] = s


def _mlp(stream, x, final_linear):
    """Run a stream; returns output and the list of layer inputs (for backprop)."""
    acts = []
    n = len(stream)
    for i, (W, b) in enumerate(stream):
        acts.append(x)
        x = x @ W + b
        if not (final_linear and i == n - 1):
            x = np.maximum(x, 0.0)
    return x, acts


def _combine(V, D, aggregator):
    if aggregator == MEAN:
        return V[:, None] + (D - D.mean(axis=1, keepdims=True))
    return V[:, None] + (D - D.max(axis=1, keepdims=True))


def forward(net: DuelingNet, features) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(V, D, Q)``; a single feature vector gives unbatched outputs."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if not np.all(np.isfinite(X)):
        raise DomainError("features must be finite")
    h, _ = _mlp(net.trunk, X, final_linear=False)
    V, _ = _mlp(net.value, h, final_linear=True)
    D, _ = _mlp(net.advantage, h, final_linear=True)
    V = V[:, 0]
    Q = _combine(V, D, net.aggregator)
    if single:
        return V[0], D[0], Q[0]
    return V, D, Q


def q_values(net: DuelingNet, features) -> np.ndarray:
    return forward(net, features)[2]


def _backprop_stream(stream, acts, out, g_out, final_linear, grads):
    """Accumulate layer grads (appended in reverse order); returns grad wrt input."""
    g = g_out
    n = len(stream)
    # recompute pre-activation signs from the next layer's stored input
    for i in range(n - 1, -1, -1):
        W, _ = stream[i]
        if not (final_linear and i == n - 1):
            post = acts[i + 1] if i + 1 < n else out
            g = g * (post > 0)
        grads.append((acts[i].T @ g, g.sum(axis=0)))
        g = g @ W.T
    return g


def backward(net: DuelingNet, batch, td_clip: Optional[float] = None) -> Tuple[List[np.ndarray], float]:
    """Gradient of the mean squared TD error over ``batch``.

    ``batch`` is ``(features, actions, targets)`` with features shaped
    ``(n, n_inputs)``.  Returns the gradient list (aligned with
    ``net.params()``) and the loss.  With ``td_clip`` the per-sample error
    fed to backprop is clipped to ``[-td_clip, td_clip]`` (a Huber-style
    update); the reported loss stays the plain squared error.
    """
    X, actions, targets = batch
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ContractViolation("batch must be non-empty")
    if not np.all(np.isfinite(targets)):
        raise DomainError("targets must be finite")

    h, trunk_acts = _mlp(net.trunk, X, final_linear=False)
    V, value_acts = _mlp(net.value, h, final_linear=True)
    D, adv_acts = _mlp(net.advantage, h, final_linear=True)
    Q = _combine(V[:, 0], D, net.aggregator)
    rows = np.arange(n)
    err = Q[rows, actions] - targets
    loss = float(np.mean(err ** 2))

    if td_clip is not None:
        err = np.clip(err, -td_clip, td_clip)
    g = 2.0 * err / n
    A = D.shape[1]
    gD = np.zeros_like(D)
    gD[rows, actions] = g
    if net.aggregator == MEAN:
        gD -= g[:, None] / A
    else:
        gD[rows, D.argmax(axis=1)] -= g
    gV = g[:, None]

    v_grads, a_grads, t_grads = [], [], []
    gh = _backprop_stream(net.value, value_acts, V, gV, True, v_grads)
    gh = gh + _backprop_stream(net.advantage, adv_acts, D, gD, True, a_grads)
    _backprop_stream(net.trunk, trunk_acts, h, gh, False, t_grads)

    flat = []
    for gs in (t_grads, v_grads, a_grads):
        for gW, gb in reversed(gs):
            flat.extend((gW, gb))
    return flat, loss


def _check_congruent(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> None:
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise ContractViolation("parameter and gradient shapes differ")


def sgd_step(net: DuelingNet, grads: Sequence[np.ndarray], alpha: float) -> DuelingNet:
    params = net.params()
    _check_congruent(params, grads)
    for p, g in zip(params, grads):
        p -= alpha * g
    return net


# -- checkpoints --------------------------------------------------------------

def _fmt(a: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in a.ravel())


def net_to_lines(net: DuelingNet) -> List[str]:
    dims = net.dims()
    arch = " | ".join(f"{k} {' '.join(map(str, v))}" for k, v in dims.items())
    lines = [CKPT_HEADER, f"{arch} | aggregator {net.aggregator}"]
    for name, stream in (("trunk", net.trunk), ("value", net.value), ("advantage", net.advantage)):
        for i, (W, b) in enumerate(stream):
            lines.append(f"{name}.{i}.W {W.shape[0]} {W.shape[1]} {_fmt(W)}")
            lines.append(f"{name}.{i}.b {b.shape[0]} {_fmt(b)}")
    return lines


def net_from_lines(lines: Sequence[str]) -> Tuple[DuelingNet, int]:
    """Parse a network; returns it with the number of lines consumed."""
    if not lines or lines[0].strip() != CKPT_HEADER:
        raise DomainError("not a D3QL-CKPT v1 file")
    parts = [p.split() for p in lines[1].split("|")]
    dims = {p[0]: [int(v) for v in p[1:]] for p in parts if p[0] != "aggregator"}
    aggregator = next(p[1] for p in parts if p[0] == "aggregator")
    streams = {}
    pos = 2
    for name in ("trunk", "value", "advantage"):
        layers = []
        for _ in range(len(dims[name]) - 1):
            tok = lines[pos].split()
            r, c = int(tok[1]), int(tok[2])
            W = np.array([float(v) for v in tok[3:]], dtype=np.float64).reshape(r, c)
            tok = lines[pos + 1].split()
            b = np.array([float(v) for v in tok[2:]], dtype=np.float64)
            layers.append([W, b])
            pos += 2
        streams[name] = layers
    return DuelingNet(streams["trunk"], streams["value"], streams["advantage"], aggregator), pos


def save_net(net: DuelingNet, path) -> None:
    Path(path).write_text("\n".join(net_to_lines(net)) + "\n")


def load_net(path) -> DuelingNet:
    return net_from_lines(Path(path).read_text().splitlines())[0]
