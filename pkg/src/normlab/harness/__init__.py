"""Scenario loading, validation, and experiment drivers."""

from .config import (
    Build,
    ScenarioConfig,
    build_actor,
    build_env,
    build_record_filter,
    build_table,
    load_scenario,
    validate_config,
)
from .experiments import (
    ExperimentResult,
    MetricsRow,
    collect_metrics,
    emit_metrics,
    run_adoption,
    run_consolidation,
    run_experiment,
    run_plain,
    run_probe,
    run_stability,
)

__all__ = [
    "Build",
    "ScenarioConfig",
    "build_actor",
    "build_env",
    "build_record_filter",
    "build_table",
    "load_scenario",
    "validate_config",
    "ExperimentResult",
    "MetricsRow",
    "collect_metrics",
    "emit_metrics",
    "run_adoption",
    "run_consolidation",
    "run_experiment",
    "run_plain",
    "run_probe",
    "run_stability",
]
