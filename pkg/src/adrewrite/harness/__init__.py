"""Pipeline orchestration, reports, CLI and the reward HTTP service."""

from .config import ExperimentConfig, load_config
from .pipeline import (
    EvaluationResult,
    cmd_ablate,
    cmd_evaluate,
    cmd_index,
    cmd_ingest,
    cmd_report,
    cmd_rewrite,
    evaluate_rewrites,
)

__all__ = [
    "ExperimentConfig",
    "EvaluationResult",
    "cmd_ablate",
    "cmd_evaluate",
    "cmd_index",
    "cmd_ingest",
    "cmd_report",
    "cmd_rewrite",
    "evaluate_rewrites",
    "load_config",
]
