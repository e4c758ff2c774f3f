"""Metrics, the incremental experiment runner and hyperparameter validation."""
from .metrics import closed_world_accuracy, open_set_accuracy, owr_harmonic
from .results import (aggregate, collect_results, read_results_csv, report_table, write_report,
                      write_results_csv)
from .runner import METRICS, CellConfig, RunResult, StepResult, evaluate_step, run_experiment
from .validation import STAGE1_PARAMS, STAGE2_PARAMS, ValidationResult, evaluate_candidate, validate_hyperparameters

__all__ = [
    "METRICS", "STAGE1_PARAMS", "STAGE2_PARAMS", "CellConfig", "RunResult", "StepResult", "ValidationResult",
    "aggregate", "closed_world_accuracy", "collect_results", "evaluate_candidate", "evaluate_step",
    "open_set_accuracy", "owr_harmonic", "read_results_csv", "report_table", "run_experiment",
    "validate_hyperparameters", "write_report", "write_results_csv",
]
