from .checkpoint_io import (
    MAGIC,
    CheckpointError,
    ProvenanceWarning,
    checkpoint_bytes,
    checkpoint_io,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from .config import ExperimentConfig, defaults_help, parse_config, parse_config_text, serialize_config
from .experiment import ArtifactExists, RunArtifacts, aggregate_reports, run_experiment, trajectory_from_log
from .tables import TableRow, emit_table, read_table_csv

__all__ = [
    "MAGIC", "ArtifactExists", "CheckpointError", "ExperimentConfig", "ProvenanceWarning", "RunArtifacts",
    "TableRow", "aggregate_reports", "checkpoint_bytes", "checkpoint_io", "defaults_help", "emit_table",
    "load_checkpoint", "parse_checkpoint", "parse_config", "parse_config_text", "read_table_csv",
    "run_experiment", "save_checkpoint", "serialize_config", "trajectory_from_log",
]
