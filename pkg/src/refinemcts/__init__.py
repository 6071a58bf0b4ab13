"""Saliency-guided Monte Carlo tree search for token-by-token caption refinement.

The VLM is replaced by small synthetic models over discrete "worlds" so the
search itself can be checked against an exhaustive oracle.
"""

from .domain import (
    ContractViolation,
    PlannerConfig,
    RegionSpec,
    RewardBreakdown,
    SequenceState,
    ValidationError,
    WorldInstance,
    append_token,
    load_config,
    load_world,
    save_world,
    validate_world,
)
from .models import BanditModel, TabularModel, UniformModel, run_expansion
from .oracle import OracleRefusal, enumerate_optimal, simple_regret
from .planner import RunTrace, StepSearch, mcts_iteration, tdsr_generate
from .reward import coverage_quality, depth_reward, noiseless_reward, redundancy_penalty, terminal_reward
from .valuenet import TrainingHyper, ValueNetParams, collect_training_data, fuse_value, train

__all__ = [
    "BanditModel",
    "ContractViolation",
    "OracleRefusal",
    "PlannerConfig",
    "RegionSpec",
    "RewardBreakdown",
    "RunTrace",
    "SequenceState",
    "StepSearch",
    "TabularModel",
    "TrainingHyper",
    "UniformModel",
    "ValidationError",
    "ValueNetParams",
    "WorldInstance",
    "append_token",
    "collect_training_data",
    "coverage_quality",
    "depth_reward",
    "enumerate_optimal",
    "fuse_value",
    "load_config",
    "load_world",
    "mcts_iteration",
    "noiseless_reward",
    "redundancy_penalty",
    "run_expansion",
    "save_world",
    "simple_regret",
    "tdsr_generate",
    "terminal_reward",
    "train",
    "validate_world",
]
