from .a2c import A2cStrategy, compute_nstep_returns
from .base import (
    HOOKS,
    AppendAfterMaterialize,
    EmptyRollout,
    EmptyStream,
    Episodes,
    EvalResult,
    ExperienceReport,
    InsufficientReplay,
    InvalidEpisodeCount,
    RLBaseStrategy,
    Rollout,
    Step,
    Steps,
    StrategyPlugin,
    TrainingBudget,
    TrainingReport,
    evaluate,
    train,
)
from .dqn import DqnStrategy, ReplayBuffer, compute_dqn_targets

__all__ = [
    "HOOKS",
    "A2cStrategy",
    "AppendAfterMaterialize",
    "DqnStrategy",
    "EmptyRollout",
    "EmptyStream",
    "Episodes",
    "EvalResult",
    "ExperienceReport",
    "InsufficientReplay",
    "InvalidEpisodeCount",
    "RLBaseStrategy",
    "ReplayBuffer",
    "Rollout",
    "Step",
    "Steps",
    "StrategyPlugin",
    "TrainingBudget",
    "TrainingReport",
    "compute_dqn_targets",
    "compute_nstep_returns",
    "evaluate",
    "train",
]
