"""Causal Kalman filtering of token-level importance-sampling ratios.

Submodules
----------
ratio_filter  log-ratios and the scalar causal Kalman filter
objectives    GRPO / sequence-level / KPO surrogates and advantages
diagnostics   token-state, spectral and variance statistics
toy_sim       tabular autoregressive policy-optimization simulator
trace_io      JSONL traces, CSV reports, TOML config
cli           ``ratio-forge`` command line
"""

__version__ = "0.1.0"

from .diagnostics import (
    DynamicsReport,
    PairedDynamicsReport,
    StateSeries,
    TokenState,
    classify_token_states,
    dynamics_report,
    low_frequency_ratio,
    run_lengths,
    switch_frequency,
    variance_stats,
    window_offpolicy_frequency,
)
from .objectives import (
    GRPO_CLIP,
    KPO_CLIP,
    AdvantageSet,
    ClipConfig,
    ObjectiveReport,
    clip_fraction,
    clipped_surrogate_token,
    group_relative_advantage,
    grpo_objective,
    kpo_objective,
    sequence_level_objective,
    sequence_ratio_geometric,
    token_pg_coefficient,
)
from .ratio_filter import (
    FilteredSeries,
    FilterWeights,
    KalmanParams,
    LogRatioSeries,
    TokenTrace,
    compute_log_ratios,
    filter_trace,
    filter_weights,
    kalman_filter_sequence,
    kalman_step,
    steady_state,
    to_ratio_space,
)
from .toy_sim import (
    ToyPolicy,
    TrainConfig,
    TrainMetrics,
    drift_log_ratios,
    drift_traces,
    finite_difference_check,
    run_training,
)

__all__ = [
    "__version__",
    "DynamicsReport",
    "PairedDynamicsReport",
    "StateSeries",
    "TokenState",
    "classify_token_states",
    "dynamics_report",
    "low_frequency_ratio",
    "run_lengths",
    "switch_frequency",
    "variance_stats",
    "window_offpolicy_frequency",
    "GRPO_CLIP",
    "KPO_CLIP",
    "AdvantageSet",
    "ClipConfig",
    "ObjectiveReport",
    "clip_fraction",
    "clipped_surrogate_token",
    "group_relative_advantage",
    "grpo_objective",
    "kpo_objective",
    "sequence_level_objective",
    "sequence_ratio_geometric",
    "token_pg_coefficient",
    "FilteredSeries",
    "FilterWeights",
    "KalmanParams",
    "LogRatioSeries",
    "TokenTrace",
    "compute_log_ratios",
    "filter_trace",
    "filter_weights",
    "kalman_filter_sequence",
    "kalman_step",
    "steady_state",
    "to_ratio_space",
    "ToyPolicy",
    "TrainConfig",
    "TrainMetrics",
    "drift_log_ratios",
    "drift_traces",
    "finite_difference_check",
    "run_training",
]
