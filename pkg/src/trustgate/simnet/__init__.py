"""Multi-node experiment harness: boots gateway+origin fleets in-process,
drives user populations, and emits per-request rows, summaries, and plots."""

from .analysis import (
    boxplot_stats,
    conservation,
    is_monotone_segmented,
    moving_average,
    segment_phases,
)
from .experiments import (
    ExperimentConfig,
    ExperimentResult,
    Row,
    UserSpec,
    default_config,
    plan_latency,
    plan_tamper,
    run_latency_comparison,
    run_load_ramp,
    run_size_report,
    run_tamper_experiment,
    write_result,
)
from .network import Network, boot_network

__all__ = [
    "boxplot_stats",
    "conservation",
    "is_monotone_segmented",
    "moving_average",
    "segment_phases",
    "ExperimentConfig",
    "ExperimentResult",
    "Row",
    "UserSpec",
    "default_config",
    "plan_latency",
    "plan_tamper",
    "run_latency_comparison",
    "run_load_ramp",
    "run_size_report",
    "run_tamper_experiment",
    "write_result",
    "Network",
    "boot_network",
]
