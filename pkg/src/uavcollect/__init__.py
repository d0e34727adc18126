"""Energy-aware UAV data collection: simulator, tabular and deep Q-learners,
transfer learning and an experiment harness."""
from .env import EnvConfig, RewardParams, TrajectorySpec, UavEnv
from .errors import ContractViolation, DomainError, NotReady
from .harness import build_scenario, evaluate_policy, run_fixed_policy

__all__ = ["EnvConfig", "RewardParams", "TrajectorySpec", "UavEnv", "ContractViolation",
           "DomainError", "NotReady", "build_scenario", "evaluate_policy", "run_fixed_policy"]
__version__ = "0.1.0"
