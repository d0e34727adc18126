"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Fixed-policy checks use 1e5 evaluation slots x 5 seeds per point. Learned checks
train D3QL agents for 1.5e5 steps on 3 seeds and share the source runs.
"""
import math
import time

import numpy as np
import pytest

from uavcollect import neural
from uavcollect.cli import main as cli_main
from uavcollect.d3ql import Agent, D3qlConfig, double_q_target, double_q_targets, train_d3ql
from uavcollect.env import Experience
from uavcollect.harness import (GreedyAgent, apply_sweep, build_scenario, eval_rng, rollout, run_fixed_policy,
                                train_rng)
from uavcollect.neural import DuelingNet, NetConfig, backward, forward, init_params, q_values
from uavcollect.oracle import ToyMDP, value_iteration
from uavcollect.tabular import LinearEpsilon, TabularParams, train_tabular
from uavcollect.transfer import SourceKnowledge, TransferMode, tl_metrics

EVAL_SLOTS = 100_000
EVAL_SEEDS = range(5)
SIGMAS = 3.0
LEARN_STEPS = 150_000
LEARN_SEEDS = (0, 1, 2)
SOURCE_SEED_OFFSET = 100
TL_COUNT = 1000
SLOW, FAST = 3, 1  # speed indices of 5 m/s and 1 m/s


@pytest.fixture
def report(capsys):
    def emit(label, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {label}: {detail}")
        assert ok, detail
    return emit


def margin(a, b):
    """(a - b) in units of the combined standard error."""
    se = math.hypot(a.stderr.avg_reward, b.stderr.avg_reward)
    return (a.mean.avg_reward - b.mean.avg_reward) / se if se > 0 else math.inf


def duel(cfg, winner, loser):
    w = run_fixed_policy(cfg, winner, EVAL_SLOTS, EVAL_SEEDS)
    l = run_fixed_policy(cfg, loser, EVAL_SLOTS, EVAL_SEEDS)
    z = margin(w, l)
    return z > SIGMAS, (f"speed#{winner} {w.mean.avg_reward:.4f}+-{w.stderr.avg_reward:.4f} vs "
                        f"speed#{loser} {l.mean.avg_reward:.4f}+-{l.stderr.avg_reward:.4f}, margin {z:.1f} SE "
                        f"(need > {SIGMAS})")


def source():
    return build_scenario("SourceMS")


# -- 1-4: fixed-policy environment checks -------------------------------------

def test_c1a_slow_return_favours_low_speed(report):
    t0 = time.time()
    ok, d = duel(apply_sweep(source(), "v_r", 1), FAST, SLOW)
    report("1a (v_r=1: speed 1 beats speed 5)", ok and time.time() - t0 < 60, d)


def test_c1b_fast_return_favours_high_speed(report):
    ok, d = duel(apply_sweep(source(), "v_r", 10), SLOW, FAST)
    report("1b (v_r=10: speed 5 beats speed 1)", ok, d)


def test_c2a_sparse_zone_favours_high_speed(report):
    ok, d = duel(apply_sweep(source(), "p3", 0.1), SLOW, FAST)
    report("2a (p3=0.1: speed 5 beats speed 1)", ok, d)


def test_c2b_dense_zone_favours_low_speed(report):
    ok, d = duel(apply_sweep(source(), "p3", 1.0), FAST, SLOW)
    report("2b (p3=1.0: speed 1 beats speed 5)", ok, d)


def test_c3a_small_battery_favours_low_speed(report):
    ok, d = duel(apply_sweep(source(), "E", 100), FAST, SLOW)
    report("3a (E=100: speed 1 beats speed 5)", ok, d)


def test_c3b_large_battery_favours_high_speed(report):
    ok, d = duel(apply_sweep(source(), "E", 1000), SLOW, FAST)
    report("3b (E=1000: speed 5 beats speed 1)", ok, d)


@pytest.mark.parametrize("speed", [1, 2, 3])
def test_c4_longer_replenishment_lowers_reward(report, speed):
    short = run_fixed_policy(apply_sweep(source(), "t_b", 5), speed, EVAL_SLOTS, EVAL_SEEDS)
    long_ = run_fixed_policy(apply_sweep(source(), "t_b", 50), speed, EVAL_SLOTS, EVAL_SEEDS)
    z = margin(short, long_)
    report(f"4 (speed#{speed}: t_b=50 below t_b=5)", z > SIGMAS,
           f"t_b=5 {short.mean.avg_reward:.4f}, t_b=50 {long_.mean.avg_reward:.4f}, margin {z:.1f} SE")


# -- 5-8: learner mechanics ---------------------------------------------------

def _loss(net, X, a, y):
    return float(np.mean((q_values(net, X)[np.arange(len(a)), a] - y) ** 2))


def test_c5_gradients_match_finite_differences(report):
    t0 = time.time()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cfg = NetConfig(trunk=(6, 5), value_hidden=(4,), advantage_hidden=(4,),
                        aggregator="mean" if seed % 2 == 0 else "max")
        net = init_params(cfg, rng)
        for p in net.params():
            if p.ndim == 1:
                p[...] = rng.normal(scale=0.1, size=p.shape)
        X, a, y = rng.uniform(size=(5, 3)), rng.integers(0, 4, 5), rng.normal(size=5)
        grads, _ = backward(net, (X, a, y))
        h = 1e-5
        for g, p in zip(grads, net.params()):
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + h
                up = _loss(net, X, a, y)
                p[i] = old - h
                down = _loss(net, X, a, y)
                p[i] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(g[i] - fd) / max(abs(g[i]) + abs(fd), 1e-8))
    elapsed = time.time() - t0
    report("5 (backward vs central differences)", worst <= 1e-4 and elapsed < 10,
           f"worst relative error {worst:.2e}, {elapsed:.1f}s")


def test_c6_dueling_identity(report):
    rng = np.random.default_rng(0)
    worst_mean = worst_max = 0.0
    for _ in range(1000):
        seed = int(rng.integers(2**31))
        x = rng.uniform(size=3)
        for agg in ("mean", "max"):
            cfg = NetConfig(trunk=(8,), value_hidden=(4,), advantage_hidden=(4,), aggregator=agg)
            net = init_params(cfg, np.random.default_rng(seed))
            net.value[-1][1][...] = rng.normal()
            V, D, Q = forward(net, x)
            got = Q.mean() if agg == "mean" else Q[np.argmax(D)]
            err = abs(got - V) / max(abs(V), 1e-300)
            if agg == "mean":
                worst_mean = max(worst_mean, err)
            else:
                worst_max = max(worst_max, err)
    report("6 (dueling aggregation identity)", worst_mean <= 1e-10 and worst_max <= 1e-10,
           f"mean-aggregator {worst_mean:.1e}, max-aggregator {worst_max:.1e}")


def _const_net(q):
    q = np.asarray(q, dtype=float)
    return DuelingNet(trunk=[[np.zeros((3, 2)), np.zeros(2)]],
                      value=[[np.zeros((2, 1)), np.array([q.mean()])]],
                      advantage=[[np.zeros((2, len(q))), q - q.mean()]])


def test_c7_double_target_decoupling(report):
    online, target = _const_net([0.0, 1.0, 3.0, 2.0]), _const_net([9.0, 0.0, 2.0, 1.0])
    agent = Agent(online, target, costs=(2, 3, 4), E=300)
    e = Experience((0.1, 0.0, 1.0), 1, 1.0, (0.2, 0.0, 1.0), 1)
    decoupled = double_q_target(agent, e, 0.9)
    ok1 = decoupled == pytest.approx(1.0 + 0.9 * 2.0)
    net = init_params(NetConfig(), np.random.default_rng(1))
    synced = Agent(net, neural.clone_params(net), costs=(2, 3, 4), E=300)
    rng = np.random.default_rng(2)
    S2 = np.column_stack([rng.uniform(size=(200, 2)), np.ones(200)])
    r, k = rng.normal(size=200), rng.integers(1, 30, 200)
    classic = r + 0.9 ** k * q_values(net, S2).max(axis=1)
    ok2 = np.array_equal(double_q_targets(synced, r, S2, k, 0.9), classic)
    report("7 (double-Q target decoupling)", ok1 and ok2,
           f"decoupled target {decoupled:.4f} (expect 2.8), synced equals classic max: {ok2}")


TOY = {
    (0, 0): [(0.7, 1, 1.0, 1), (0.3, 2, 0.0, 3)],
    (0, 1): [(1.0, 0, 0.2, 1)],
    (1, 0): [(0.5, 0, 2.0, 2), (0.5, 2, -1.0, 1)],
    (1, 1): [(1.0, 2, 0.0, 5)],
    (2, 0): [(0.6, 0, 0.5, 1), (0.4, 1, 0.0, 2)],
    (2, 1): [(1.0, 1, 1.5, 1)],
}


def test_c8_tabular_matches_value_iteration(report):
    t0 = time.time()
    Q_star = value_iteration(TOY, 3, 2, 0.9)
    params = TabularParams(beta="harmonic", beta_power=0.7, zeta=0.9, epsilon=LinearEpsilon(1.0, 1.0, 0),
                           total_steps=100_000)
    Q, _ = train_tabular(ToyMDP(TOY, 3, 2, np.random.default_rng(0)), params, np.random.default_rng(1),
                         n_actions=2)
    learned = np.array([Q.row((s,)) for s in range(3)])
    same = np.array_equal(learned.argmax(axis=1), Q_star.argmax(axis=1))
    err = float(np.max(np.abs(learned - Q_star)))
    elapsed = time.time() - t0
    report("8 (tabular vs value iteration)", same and err <= 0.05 and elapsed < 30,
           f"greedy policies equal: {same}, max |Q - Q*| {err:.4f}, {elapsed:.1f}s")


# -- 9-10: learning and transfer ----------------------------------------------

_cache = {}


def source_run(seed):
    """D3QL on SourceMS; its parameters and full experience pool feed every transfer."""
    key = ("source", seed)
    if key not in _cache:
        pool = []
        agent, trace = train_d3ql(source(), D3qlConfig(total_steps=LEARN_STEPS),
                                  train_rng(SOURCE_SEED_OFFSET + seed), recorder=pool.append)
        _cache[key] = (SourceKnowledge(agent.q_net, pool), trace)
    return _cache[key]


def target_run(scenario, mode, seed):
    key = (scenario, mode, seed)
    if key not in _cache:
        transfer = None
        if mode != "d3ql":
            tm = TransferMode.policy() if mode == "pt" else TransferMode(mode, TL_COUNT)
            transfer = (tm, source_run(seed)[0])
        _cache[key] = train_d3ql(build_scenario(scenario), D3qlConfig(total_steps=LEARN_STEPS),
                                 train_rng(seed), transfer=transfer)
    return _cache[key]


def test_c9_learning_sanity(report):
    cfg = source()
    lines, hits = [], 0
    for seed in LEARN_SEEDS:
        agent, _ = target_run("SourceMS", "et", seed)
        learned = rollout(cfg, GreedyAgent(agent), EVAL_SLOTS, eval_rng(seed)).avg_reward
        best = max(rollout(cfg, _fixed(k), EVAL_SLOTS, eval_rng(seed)).avg_reward for k in (1, 2, 3))
        hit = 0.6 <= learned <= 0.9 and learned > best
        hits += hit
        lines.append(f"seed {seed}: ET {learned:.4f} vs best fixed {best:.4f}")
    report("9 (ET on SourceMS in [0.6, 0.9] and above best fixed, >= 2 of 3 seeds)", hits >= 2,
           "; ".join(lines))


def _fixed(k):
    from uavcollect.harness import FixedSpeed
    return FixedSpeed(k)


def _tail_mean(trace, n=20):
    return float(np.mean(trace.avg_reward[-n:]))


def _ttt(v):
    return math.inf if v is None else v


def test_c10a_policy_transfer_on_mt1(report):
    lines, hits = [], 0
    for seed in LEARN_SEEDS:
        _, base = target_run("TargetMT1", "d3ql", seed)
        _, pt = target_run("TargetMT1", "pt", seed)
        theta = 0.9 * _tail_mean(base)
        m = tl_metrics(pt, base, theta)
        hit = m.jump_start > 0 and _ttt(m.time_to_threshold) < _ttt(m.baseline_time_to_threshold)
        hits += hit
        lines.append(f"seed {seed}: jump-start {m.jump_start:.4g}, time-to-threshold PT "
                     f"{m.time_to_threshold} vs D3QL {m.baseline_time_to_threshold} (theta {theta:.4g})")
    report("10a (MT1: PT jump-start > 0 and reaches threshold first, >= 2 of 3 seeds)", hits >= 2,
           "; ".join(lines))


def test_c10b_policy_transfer_gain_not_above_experience_transfer_on_mt2(report):
    lines, hits = [], 0
    for seed in LEARN_SEEDS:
        _, base = target_run("TargetMT2", "d3ql", seed)
        gains = {}
        for mode in ("pt", "et", "hybrid"):
            _, tr = target_run("TargetMT2", mode, seed)
            gains[mode] = tl_metrics(tr, base, 0.0).asymptotic_gain
        hit = gains["pt"] <= gains["et"] and gains["pt"] <= gains["hybrid"]
        hits += hit
        lines.append(f"seed {seed}: gain PT {gains['pt']:.4g}, ET {gains['et']:.4g}, "
                     f"Hybrid {gains['hybrid']:.4g}")
    report("10b (MT2: PT asymptotic gain <= ET and <= Hybrid, >= 2 of 3 seeds)", hits >= 2, "; ".join(lines))


# -- 11: determinism ----------------------------------------------------------

def test_c11_commands_are_byte_reproducible(report, tmp_path):
    spec = tmp_path / "spec.yaml"
    spec.write_text("scenario: TargetMT2\nalgorithms: [fixed:1, qlearning, d3ql, 'd3ql_tl:hybrid']\n"
                    "seeds: [0, 1]\nsweep: {param: p3, values: [0.1, 1.0]}\nsteps: 400\neval_slots: 1000\n"
                    "tl_count: 50\n")

    def session(root):
        root.mkdir()
        cmds = [
            ["train", "--scenario", "SourceMS", "--algo", "d3ql", "--steps", "600", "--seed", "4",
             "--out", root / "d3"],
            ["train", "--scenario", "SourceMS", "--algo", "qlearning", "--steps", "600", "--out", root / "q"],
            ["export-exp", "--from-train-run", root / "d3", "--out", root / "near.txt", "--count", "40"],
            ["transfer", "--mode", "hybrid", "--source-ckpt", root / "d3" / "checkpoint.txt",
             "--source-exp", root / "near.txt", "--count", "40", "--scenario", "TargetMT1", "--steps", "400",
             "--seed", "2", "--out", root / "tl"],
            ["eval", "--checkpoint", root / "tl" / "checkpoint.txt", "--scenario", "TargetMT1",
             "--slots", "1000", "--seeds", "0,1", "--out", root / "eval_tl.csv"],
            ["eval", "--checkpoint", root / "q" / "checkpoint.txt", "--scenario", "SourceMS",
             "--slots", "1000", "--seeds", "3", "--out", root / "eval_q.csv"],
            ["sweep", "--spec", spec, "--out", root / "sweep.csv"],
        ]
        for c in cmds:
            assert cli_main([str(a) for a in c]) == 0
        return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    a, b = session(tmp_path / "a"), session(tmp_path / "b")
    differing = sorted(str(k) for k in a if a[k] != b.get(k))
    ok = a.keys() == b.keys() and not differing
    report("11 (byte-identical reruns)", ok, f"{len(a)} files compared, differing: {differing or 'none'}")
