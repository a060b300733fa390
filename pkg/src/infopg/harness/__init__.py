"""Experiment orchestration: configuration, seeding, training, evaluation and the CLI."""

from .checkpoint import FORMAT_VERSION, load_checkpoint, restore, save_checkpoint
from .config import ALGORITHMS, ENV_DEFAULTS, RunConfig, load_config, parse_config
from .metrics import FIELDS, EpochMetrics, MetricsWriter, emit_metrics, read_metrics
from .run import EvalSummary, RunResult, evaluate, evaluate_bundles, run_training, scripted_bundles, standard_error
from .seeding import Streams, stream

__all__ = [
    "ALGORITHMS",
    "ENV_DEFAULTS",
    "EpochMetrics",
    "EvalSummary",
    "FIELDS",
    "FORMAT_VERSION",
    "MetricsWriter",
    "RunConfig",
    "RunResult",
    "Streams",
    "emit_metrics",
    "evaluate",
    "evaluate_bundles",
    "load_checkpoint",
    "load_config",
    "parse_config",
    "read_metrics",
    "restore",
    "run_training",
    "save_checkpoint",
    "scripted_bundles",
    "standard_error",
    "stream",
]
