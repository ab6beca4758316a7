"""
Benchmark harness: experiment configuration, tuning, orchestration and results.
"""
from orlearners.harness.config import ExperimentConfig, config_hash, load_config
from orlearners.harness.experiments import run_setting1, run_setting2
from orlearners.harness.results import ResultRecord, ResultStore
from orlearners.harness.tuning import TuningResult, TuningStage, search_grid, tune

__all__ = [
    "ExperimentConfig",
    "ResultRecord",
    "ResultStore",
    "TuningResult",
    "TuningStage",
    "config_hash",
    "load_config",
    "run_setting1",
    "run_setting2",
    "search_grid",
    "tune",
]
