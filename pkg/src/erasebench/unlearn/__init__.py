from .config import ALGORITHMS, PARAM_SCOPES, AlgoConfig, ConfigError, StepOutcome
from .firstorder import (
    ShuffledPool,
    fanchuan_step,
    kookmin_reset,
    kookmin_select,
    kookmin_step,
    retain_pool,
    seif_step,
    uniform_kl,
)
from .influence import (
    ceu_step,
    ceu_update,
    gaussian_mechanism_sigma,
    gif_nodes,
    gif_step,
    hop_distances,
    idea_step,
    idea_update,
    forget_samples,
    modified_samples,
    resolve_scope,
    scif_step,
    scif_update,
)
from .runner import POLICIES, Trajectory, TrajectoryStep, params_digest, run_sequence, step_record

__all__ = [
    "ALGORITHMS", "PARAM_SCOPES", "POLICIES", "AlgoConfig", "ConfigError", "ShuffledPool", "StepOutcome",
    "Trajectory", "TrajectoryStep", "ceu_step", "ceu_update", "fanchuan_step", "forget_samples", "gaussian_mechanism_sigma",
    "gif_nodes", "gif_step", "hop_distances", "idea_step", "idea_update", "kookmin_reset", "kookmin_select",
    "kookmin_step", "modified_samples", "params_digest", "resolve_scope", "retain_pool", "run_sequence",
    "scif_step", "scif_update", "seif_step", "step_record", "uniform_kl",
]
