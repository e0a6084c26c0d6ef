"""Benchmark toolkit for machine unlearning in collaborative-filtering recommenders."""

from .core_math import (
    ContractViolation,
    DivergenceError,
    HvpOracle,
    ParamVector,
    SolveReport,
    cg_solve,
    clip_by_norm,
    finite_check,
    gaussian_perturb,
    neumann_inverse_hvp,
)
from .data import Dataset, ForgetBatch, InteractionLog, apply_forget, build_dataset, load_interactions, sample_retain
from .synthetic import make_synthetic_log

__version__ = "0.1.0"
