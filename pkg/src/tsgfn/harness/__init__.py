"""Run artifacts, cross-seed comparison, grid sweeps and report figures."""
from .artifacts import (OUTPUT_ROOT_ENV, ArtifactError, evaluate_artifact, load_artifact_config, load_summary,
                        metrics_hash, read_metrics, train_artifact)
from .compare import CompareError, compare, format_final, stderr
from .sweep import expand, leaderboard, load_sweep_spec, run_sweep, validate_sweep_spec

__all__ = [
    "OUTPUT_ROOT_ENV", "ArtifactError", "evaluate_artifact", "load_artifact_config", "load_summary",
    "metrics_hash", "read_metrics", "train_artifact", "CompareError", "compare", "format_final", "stderr",
    "expand", "leaderboard", "load_sweep_spec", "run_sweep", "validate_sweep_spec",
]
