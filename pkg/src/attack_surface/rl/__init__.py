from .triggers import default_eta, first_sparse_index, tau, tau_last, trigger_times
from .learner import (
    DEFAULT_ACTIONS,
    DefenseLearner,
    LearnerState,
    RLConfig,
    RunMetrics,
    maybe_sync_belief,
    policy_csv,
    rollout,
    select_action,
    switching_cost,
    train,
    update_estimate,
)
from .envs import SyntheticSurfaceEnv, TraceReplayEnv, replay_static
from .model import (
    TabularModel,
    evaluate_policy,
    growth_exponent,
    oracle_optimal,
    regret_series,
    single_state_model,
    synthetic_model,
)
from .experiments import (
    aggregate_budget,
    queue_stats,
    synthetic_budget_point,
    trace_budget_point,
    tune_weight,
)

__all__ = [
    "default_eta", "first_sparse_index", "tau", "tau_last", "trigger_times",
    "DEFAULT_ACTIONS", "DefenseLearner", "LearnerState", "RLConfig", "RunMetrics",
    "maybe_sync_belief", "policy_csv", "rollout", "select_action", "switching_cost", "train",
    "update_estimate",
    "SyntheticSurfaceEnv", "TraceReplayEnv", "replay_static",
    "TabularModel", "evaluate_policy", "growth_exponent", "oracle_optimal", "regret_series",
    "single_state_model", "synthetic_model",
    "aggregate_budget", "queue_stats", "synthetic_budget_point", "trace_budget_point", "tune_weight",
]
