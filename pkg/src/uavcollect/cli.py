"""Command-line entry point: ``python -m uavcollect <command> ...``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import yaml

from . import harness
from .d3ql import D3qlConfig, load_agent, load_experiences, save_agent, save_experiences, train_d3ql
from .env import EnvConfig, UavEnv, load_config
from .errors import ContractViolation, DomainError, NotReady
from .harness import GreedyAgent, GreedyTable, ResultRow, emit_csv
from .neural import CKPT_HEADER
from .tabular import QTAB_HEADER, QTable, TabularParams, train_tabular
from .transfer import SourceKnowledge, TransferMode, select_experiences

CHECKPOINT = "checkpoint.txt"
TRACE = "trace.csv"
EXPERIENCES = "experiences.txt"
RUN_META = "run.yaml"


def _scenario_config(args, name: str) -> EnvConfig:
    cfg = harness.build_scenario(name)
    if args.config:
        cfg = load_config(args.config, base=cfg)
    return cfg


def _seed(args) -> int:
    return args.seed if args.seed is not None else 0


def _write_meta(out: Path, **meta) -> None:
    with open(out / RUN_META, "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=True)


def cmd_scenario_list(args) -> int:
    for sid in harness.SCENARIOS:
        print(harness.scenario_summary(sid))
    return 0


def cmd_train(args) -> int:
    cfg = _scenario_config(args, args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = _seed(args)
    rng = harness.train_rng(seed)
    if args.algo == "qlearning":
        env_rng, agent_rng = rng.spawn(2)
        Q, trace = train_tabular(UavEnv(cfg, env_rng), TabularParams(total_steps=args.steps), agent_rng)
        Q.save(out / CHECKPOINT)
    else:
        pool = []
        agent, trace = train_d3ql(cfg, D3qlConfig(total_steps=args.steps), rng,
                                  mask_battery_action=args.algo == "d3ql_nora", recorder=pool.append)
        save_agent(agent, out / CHECKPOINT)
        save_experiences(pool, out / EXPERIENCES, with_distance=True)
    trace.to_csv(out / TRACE)
    _write_meta(out, scenario=harness.scenario_id(args.scenario), algorithm=args.algo, seed=seed,
                steps=args.steps)
    print(f"wrote {out / CHECKPOINT} and {out / TRACE}")
    return 0


def _load_policy(path: Path, cfg: EnvConfig, nora: bool):
    first = path.read_text().split("\n", 1)[0].strip()
    if first == CKPT_HEADER:
        agent = load_agent(path, cfg, mask_battery_action=nora)
        return GreedyAgent(agent), "d3ql_nora" if nora else "d3ql", agent.steps_done
    if first == QTAB_HEADER:
        t = cfg.trajectory
        bounds = (math.ceil(t.x_max), math.ceil(t.y_max), cfg.E, cfg.n_actions)
        return GreedyTable(QTable.load(path, cfg.n_actions, bounds)), "qlearning", 0
    raise DomainError(f"{path} is neither a {CKPT_HEADER} nor a {QTAB_HEADER} file")


def cmd_eval(args) -> int:
    cfg = _scenario_config(args, args.scenario)
    policy, algo, steps = _load_policy(Path(args.checkpoint), cfg, args.nora)
    sid = harness.scenario_id(args.scenario)
    rows = []
    for s in args.seeds:
        m = harness.rollout(cfg, policy, args.slots, harness.eval_rng(s))
        rows.append(ResultRow(sid, algo, "", None, s, m.avg_reward, m.throughput, m.energy_per_slot,
                              steps, args.slots))
    emit_csv(rows, args.out)
    return 0


def cmd_sweep(args) -> int:
    with open(args.spec) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise DomainError("sweep spec must be a mapping")
    base = _scenario_config(args, data["scenario"]) if args.config and "scenario" in data else None
    spec = harness.spec_from_dict(data, base=base)
    if args.workers is not None:
        spec.workers = args.workers
    rows = harness.run_sweep(spec)
    emit_csv(rows, args.out)
    failed = sum(r.error is not None for r in rows)
    if failed:
        print(f"{failed} of {len(rows)} sweep points failed", file=sys.stderr)
    return 0


def cmd_transfer(args) -> int:
    cfg = _scenario_config(args, args.scenario)
    mode = TransferMode.policy() if args.mode == "pt" else TransferMode(args.mode, args.count, args.radius)
    if mode.uses_policy and not args.source_ckpt:
        raise ContractViolation(f"--mode {args.mode} needs --source-ckpt")
    if mode.uses_experience and not args.source_exp:
        raise ContractViolation(f"--mode {args.mode} needs --source-exp")
    know = SourceKnowledge.load(args.source_ckpt if mode.uses_policy else None,
                                args.source_exp if mode.uses_experience else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = _seed(args)
    agent, trace = train_d3ql(cfg, D3qlConfig(total_steps=args.steps), harness.train_rng(seed),
                              transfer=(mode, know))
    save_agent(agent, out / CHECKPOINT)
    trace.to_csv(out / TRACE)
    _write_meta(out, scenario=harness.scenario_id(args.scenario), algorithm=f"d3ql_tl:{args.mode}",
                seed=seed, steps=args.steps, count=args.count, radius=args.radius)
    print(f"wrote {out / CHECKPOINT} and {out / TRACE}")
    return 0


def cmd_export_exp(args) -> int:
    src = Path(args.from_train_run) / EXPERIENCES
    if not src.exists():
        raise DomainError(f"{src} not found; export needs a d3ql train run directory")
    pool = load_experiences(src)
    if args.count is not None:
        pool = select_experiences(pool, args.radius, args.count)
    save_experiences(pool, args.out, with_distance=True)
    print(f"wrote {len(pool)} experiences to {args.out}")
    return 0


def _seed_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--config", default=argparse.SUPPRESS, help="YAML file of scenario overrides")
    glob.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")

    p = argparse.ArgumentParser(prog="uavcollect", description="UAV data-collection simulator and learners",
                                parents=[glob])
    sub = p.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("scenario", help="scenario library", parents=[glob])
    sc_sub = sc.add_subparsers(dest="scenario_command", required=True)
    sc_sub.add_parser("list", help="print the built-in scenarios", parents=[glob]).set_defaults(func=cmd_scenario_list)

    tr = sub.add_parser("train", help="train a learner", parents=[glob])
    tr.add_argument("--scenario", required=True)
    tr.add_argument("--algo", required=True, choices=["qlearning", "d3ql", "d3ql_nora"])
    tr.add_argument("--steps", type=int, default=150_000)
    tr.add_argument("--out", required=True, help="output directory")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="greedy evaluation of a checkpoint", parents=[glob])
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--scenario", required=True)
    ev.add_argument("--slots", type=int, default=100_000)
    ev.add_argument("--seeds", type=_seed_list, default=[0, 1, 2, 3, 4])
    ev.add_argument("--nora", action="store_true", help="forbid the battery action")
    ev.add_argument("--out", default="-", help="CSV path or - for stdout")
    ev.set_defaults(func=cmd_eval)

    sw = sub.add_parser("sweep", help="run an experiment spec", parents=[glob])
    sw.add_argument("--spec", required=True)
    sw.add_argument("--out", default="-")
    sw.add_argument("--workers", type=int, default=None)
    sw.set_defaults(func=cmd_sweep)

    tf = sub.add_parser("transfer", help="train D3QL with transferred knowledge", parents=[glob])
    tf.add_argument("--mode", required=True, choices=["et", "pt", "hybrid"])
    tf.add_argument("--source-ckpt")
    tf.add_argument("--source-exp")
    tf.add_argument("--count", type=int, default=1000)
    tf.add_argument("--radius", type=float, default=20.0)
    tf.add_argument("--scenario", required=True)
    tf.add_argument("--steps", type=int, default=150_000)
    tf.add_argument("--out", required=True, help="output directory")
    tf.set_defaults(func=cmd_transfer)

    ex = sub.add_parser("export-exp", help="export a train run's experiences", parents=[glob])
    ex.add_argument("--from-train-run", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--count", type=int, default=None, help="keep the N nearest to the station")
    ex.add_argument("--radius", type=float, default=20.0)
    ex.set_defaults(func=cmd_export_exp)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.config = getattr(args, "config", None)
    args.seed = getattr(args, "seed", None)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DomainError, ContractViolation, NotReady, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
