import dataclasses
import math

import numpy as np
import pytest

from uavcollect import harness
from uavcollect.d3ql import Agent, ReplayBuffer
from uavcollect.env import EnvConfig, TrajectorySpec
from uavcollect.errors import ContractViolation, DomainError
from uavcollect.harness import (CSV_HEADER, ExperimentSpec, FixedSpeed, GreedyAgent, ResultRow, apply_sweep,
                                build_scenario, emit_csv, evaluate_policy, parse_algorithm, run_fixed_policy,
                                run_sweep, spec_from_dict)
from uavcollect.neural import NetConfig
from uavcollect.oracle import optimal_average_reward
from uavcollect.transfer import SourceKnowledge, TransferMode, apply_transfer


def test_scenarios():
    ms = build_scenario("SourceMS")
    assert ms.trajectory.zone_probs == (0.1, 0.25, 0.6, 0.15)
    assert (ms.E, ms.t_b, ms.v_r) == (300, 10, 1.0)
    assert ms.speeds == (1.0, 3.0, 5.0) and ms.costs == (2, 3, 4) and ms.station == (0.0, 0.0)
    assert ms.trajectory.zone_breaks == (0, 60, 120, 180) and ms.trajectory.length == 240
    assert build_scenario("TargetMT2").trajectory.zone_probs == (0.6, 0.15, 0.1, 0.25)
    mt1 = build_scenario("target_mt1")
    assert mt1.trajectory.length == 320
    # zones follow x on both legs: 80 m of travel per zone per direction
    assert mt1.trajectory.zone_probs[0] == mt1.trajectory.zone_probs[3]
    assert mt1.trajectory.zone_probs[1] == mt1.trajectory.zone_probs[2]
    with pytest.raises(DomainError):
        build_scenario("nowhere")


def test_scenario_summary_lists_parameters():
    s = harness.scenario_summary("TargetMT2")
    assert s.startswith("TargetMT2:") and "E=300" in s and "0.6" in s


def test_apply_sweep():
    cfg = build_scenario("SourceMS")
    assert apply_sweep(cfg, "t_b", 50).t_b == 50
    assert apply_sweep(cfg, "v_r", 10).v_r == 10.0
    assert apply_sweep(cfg, "E", 1000).E == 1000
    assert apply_sweep(cfg, "p3", 1.0).trajectory.zone_probs == (0.1, 0.25, 1.0, 0.15)
    for bad in [("p3", 1.5), ("t_b", 0), ("v_r", 0), ("E", 2.5), ("speed", 1)]:
        with pytest.raises(DomainError):
            apply_sweep(cfg, *bad)


def test_fixed_policy_without_packets():
    t = TrajectorySpec(((0, 0), (60, 0), (60, 60), (0, 60)), True, (0, 60, 120, 180), (0, 0, 0, 0))
    m = run_fixed_policy(EnvConfig(t), 1, 20_000, [0, 1])
    assert m.mean.throughput == 0
    assert m.mean.energy_per_slot < 2
    assert m.mean.avg_reward < 1.0
    assert m.stderr.throughput == 0


def test_fixed_policy_falls_back_to_affordable_speed():
    cfg = build_scenario("SourceMS")

    class Stub:
        def feasible(self):
            return frozenset({0, 1, 2})

    assert FixedSpeed(3)(Stub()) == 2
    assert FixedSpeed(1)(Stub()) == 1
    with pytest.raises(ContractViolation):
        run_fixed_policy(cfg, 4, 100, [0])
    with pytest.raises(ContractViolation):
        run_fixed_policy(cfg, 0, 100, [0])


def test_evaluate_policy_matches_fixed_runner():
    cfg = build_scenario("SourceMS")
    a = run_fixed_policy(cfg, 2, 5000, [3, 4, 5])
    b = evaluate_policy(cfg, FixedSpeed(2), 5000, [3, 4, 5])
    assert a == b
    assert len(a.per_seed) == 3
    assert a.mean.avg_reward == pytest.approx(np.mean([m.avg_reward for m in a.per_seed]))
    with pytest.raises(DomainError):
        evaluate_policy(cfg, FixedSpeed(2), 5000, [])


def test_rollout_is_deterministic_per_seed():
    cfg = build_scenario("SourceMS")
    r1 = harness.rollout(cfg, FixedSpeed(1), 3000, harness.eval_rng(7))
    r2 = harness.rollout(cfg, FixedSpeed(1), 3000, harness.eval_rng(7))
    r3 = harness.rollout(cfg, FixedSpeed(1), 3000, harness.eval_rng(8))
    assert r1 == r2 and r1 != r3


def test_self_policy_transfer_evaluates_identically():
    cfg = build_scenario("SourceMS")
    src = Agent.fresh(cfg, NetConfig(), np.random.default_rng(0))
    dst = Agent.fresh(cfg, NetConfig(), np.random.default_rng(1))
    apply_transfer(dst, ReplayBuffer(1), SourceKnowledge(src.q_net, []), TransferMode.policy())
    a = evaluate_policy(cfg, GreedyAgent(src), 3000, [0, 1])
    b = evaluate_policy(cfg, GreedyAgent(dst), 3000, [0, 1])
    assert a == b


def test_parse_algorithm():
    assert parse_algorithm("fixed:2") == ("fixed", "2")
    assert parse_algorithm("D3QL") == ("d3ql", None)
    assert parse_algorithm("d3ql_tl:hybrid") == ("d3ql_tl", "hybrid")
    for bad in ["fixed", "fixed:x", "d3ql:3", "d3ql_tl:xx", "sarsa"]:
        with pytest.raises(DomainError):
            parse_algorithm(bad)


def test_experiment_spec_validation():
    ok = ExperimentSpec("SourceMS", ["fixed:1"], [0], "t_b", list(range(5, 55, 5)))
    assert ok.sweep_values == tuple(range(5, 55, 5))
    ExperimentSpec("SourceMS", ["fixed:1"], [0], "v_r", list(range(1, 11)))
    ExperimentSpec("SourceMS", ["fixed:1"], [0], "E", list(range(100, 1100, 100)))
    with pytest.raises(DomainError):
        ExperimentSpec("SourceMS", ["fixed:1"], [])
    with pytest.raises(DomainError):
        ExperimentSpec("SourceMS", [], [0])
    with pytest.raises(DomainError):
        ExperimentSpec("SourceMS", ["fixed:1"], [0], "p3", [0.5, 2.0])
    with pytest.raises(DomainError):
        ExperimentSpec("SourceMS", ["fixed:1"], [0], None, [1])
    with pytest.raises(DomainError):
        ExperimentSpec("SourceMS", ["fixed:1"], [0], "t_b", [])


def test_sweep_rows_order_and_content():
    spec = ExperimentSpec("SourceMS", ["fixed:1", "fixed:3"], [0, 1], "t_b", [5, 50], eval_slots=2000)
    rows = run_sweep(spec)
    assert [(r.sweep_value, r.algorithm, r.seed) for r in rows] == spec.points()
    assert rows[0].sweep_param == "t_b" and rows[0].train_steps == 0 and rows[0].eval_slots == 2000
    ref = harness.rollout(apply_sweep(build_scenario("SourceMS"), "t_b", 5), FixedSpeed(1), 2000,
                          harness.eval_rng(0))
    assert rows[0].avg_reward == ref.avg_reward
    assert all(r.error is None for r in rows)


def test_sweep_records_errors_and_continues(monkeypatch):
    real = harness.train_policy

    def flaky(cfg, algorithm, seed, steps, tl_count=1000, source=None):
        if seed == 1:
            raise RuntimeError("boom")
        return real(cfg, algorithm, seed, steps, tl_count, source)

    monkeypatch.setattr(harness, "train_policy", flaky)
    rows = run_sweep(ExperimentSpec("SourceMS", ["fixed:1"], [0, 1, 2], eval_slots=1000))
    assert [r.error is None for r in rows] == [True, False, True]
    assert math.isnan(rows[1].avg_reward) and "boom" in rows[1].error


def test_emit_csv(tmp_path):
    emit_csv([], tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == ",".join(CSV_HEADER) + "\n"
    row = ResultRow("SourceMS", "fixed:1", "v_r", 10.0, 3, 1 / 3, 0.123456789012345, 1.5, 0, 100)
    emit_csv([row], tmp_path / "one.csv")
    lines = (tmp_path / "one.csv").read_text().splitlines()
    assert lines[0] == "scenario,algorithm,sweep_param,sweep_value,seed,avg_reward,throughput,energy_per_slot,train_steps,eval_slots"
    assert lines[1] == "SourceMS,fixed:1,v_r,10,3,0.3333333333,0.123456789,1.5,0,100"
    assert len(lines) == 2
    with pytest.raises(OSError):
        emit_csv([row], tmp_path / "missing" / "dir" / "x.csv")


def test_fixed_sweep_csv_is_reproducible(tmp_path):
    spec = ExperimentSpec("TargetMT2", ["fixed:1", "fixed:2"], [4, 5], "p3", [0.1, 1.0], eval_slots=3000)
    emit_csv(run_sweep(spec), tmp_path / "a.csv")
    emit_csv(run_sweep(spec), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_short_learned_sweep_point():
    spec = ExperimentSpec("SourceMS", ["qlearning", "d3ql", "d3ql_nora"], [0], train_steps=300, eval_slots=500)
    rows = run_sweep(spec)
    assert all(r.error is None and np.isfinite(r.avg_reward) for r in rows)
    assert all(r.train_steps == 300 for r in rows)


def test_spec_from_dict():
    spec = spec_from_dict({"scenario": "source_ms", "algorithm": "fixed:1", "seeds": [1, 2],
                           "sweep": {"param": "E", "values": [100, 200]}, "eval_slots": 1000, "t_b": 20})
    assert spec.scenario == "SourceMS" and spec.algorithms == ("fixed:1",)
    assert spec.config().t_b == 20 and spec.sweep_param == "E"
    with pytest.raises(DomainError):
        spec_from_dict({"scenario": "SourceMS", "algorithm": "fixed:1", "seeds": [0], "bogus": 1})
    with pytest.raises(DomainError):
        spec_from_dict({"algorithm": "fixed:1", "seeds": [0]})
    with pytest.raises(DomainError):
        spec_from_dict({"scenario": "SourceMS", "algorithm": "fixed:1", "seeds": [0],
                        "sweep": {"param": "E", "vals": [1]}})


def test_parallel_sweep_matches_serial():
    spec = ExperimentSpec("SourceMS", ["fixed:1"], [0, 1], "E", [100, 300], eval_slots=1000)
    serial = run_sweep(spec)
    spec.workers = 2
    assert run_sweep(spec) == serial


# -- average-reward oracle ----------------------------------------------------

def test_oracle_bounds_fixed_policies_on_tiny_loop():
    t = TrajectorySpec(((0, 0), (4, 0), (4, 4), (0, 4)), True, (0, 4, 8, 12), (0.2, 0.5, 0.9, 0.1))
    cfg = EnvConfig(t, speeds=(1, 2), costs=(1, 2), E=12, t_b=2)
    lo, hi = optimal_average_reward(cfg, tol=1e-6)
    assert hi - lo <= 1e-6
    for speed in (1, 2):
        exact = harness.rollout(cfg, FixedSpeed(speed), 200_000, harness.eval_rng(0)).avg_reward
        assert exact <= hi + 0.01
    # brute force over discounted-optimal policies with a discount close to 1
    from uavcollect.oracle import _expected_dynamics
    W, T, N = _expected_dynamics(cfg)
    V = np.zeros(W.shape[1])
    for _ in range(200_000):
        new = np.max(W + 0.9999 ** T * V[N], axis=0)
        if np.max(np.abs(new - V)) < 1e-11:
            break
        V = new
    pol = np.argmax(W + 0.9999 ** T * V[N], axis=0)
    s, seen, rs, ts = cfg.E, {}, [], []
    while s not in seen:
        seen[s] = len(rs)
        rs.append(W[pol[s], s])
        ts.append(T[pol[s], s])
        s = N[pol[s], s]
    j = seen[s]
    ratio = sum(rs[j:]) / sum(ts[j:])
    assert lo - 1e-6 <= ratio + 1e-4 and ratio <= hi + 1e-6
