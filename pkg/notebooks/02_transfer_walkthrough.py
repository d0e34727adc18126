# %% [markdown]
# # D3QL and knowledge transfer, at reduced scale
#
# A source agent is trained on SourceMS. Its parameters seed policy transfer
# and its experiences near the station seed experience transfer on the
# target scenarios. Budgets here are small so the script finishes in a few
# minutes; the acceptance tests use the full 1.5e5 steps.

# %%
import numpy as np

from uavcollect.d3ql import D3qlConfig, train_d3ql
from uavcollect.harness import GreedyAgent, build_scenario, evaluate_policy, train_rng
from uavcollect.transfer import SourceKnowledge, TransferMode, select_experiences, tl_metrics

STEPS = 20_000
source_cfg = build_scenario("SourceMS")
pool = []
src_agent, src_trace = train_d3ql(source_cfg, D3qlConfig(total_steps=STEPS), train_rng(100),
                                  recorder=pool.append)
know = SourceKnowledge(src_agent.q_net, pool)
near = select_experiences(pool, 20.0, 1000)
print(len(pool), "experiences recorded,", len(near), "within 20 m of the station")

# %%
runs = {}
target = build_scenario("TargetMT2")
for name, mode in [("d3ql", None), ("pt", TransferMode.policy()), ("et", TransferMode.experience(1000)),
                   ("hybrid", TransferMode.hybrid(1000))]:
    transfer = None if mode is None else (mode, know)
    runs[name] = train_d3ql(target, D3qlConfig(total_steps=STEPS), train_rng(0), transfer=transfer)

# %%
base_trace = runs["d3ql"][1]
theta = 0.9 * float(np.mean(base_trace.avg_reward[-20:]))
for name in ("pt", "et", "hybrid"):
    m = tl_metrics(runs[name][1], base_trace, theta)
    print(f"{name:>7}: jump-start {m.jump_start:10.3g}  asymptotic gain {m.asymptotic_gain:10.3g}  "
          f"time-to-threshold {m.time_to_threshold}")

# %% [markdown]
# The training traces include exploratory battery returns from far away,
# whose reward is hugely negative, so the curves are dominated by
# exploration. Greedy evaluation is the cleaner comparison.

# %%
for name, (agent, _) in runs.items():
    m = evaluate_policy(target, GreedyAgent(agent), 20_000, [0, 1])
    print(f"{name:>7}: avg reward {m.mean.avg_reward:.4f}  throughput {m.mean.throughput:.4f}")
