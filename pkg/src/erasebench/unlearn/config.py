"""Unlearning hyperparameters and per-step results."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

from ..core_math import ParamVector

ALGORITHMS = ("scif", "gif", "ceu", "idea", "fanchuan", "kookmin", "seif")
PARAM_SCOPES = ("auto", "user_embedding_only", "item_embedding_only", "all")


class ConfigError(ValueError):
    pass


@dataclass
class AlgoConfig:
    """Hyperparameters for every unlearning algorithm.

    Defaults not fixed by published results are implementation choices:
    ``damping``, ``bs``, ``gif_*``, ``ceu_lambda``, ``idea_damping`` and the
    repair budgets. ``max_norm=10``, ``seif_sigma=0.6`` and
    ``kookmin_init_rate=1e-4`` follow the reported tuning.
    """

    algorithm: str = "scif"
    max_norm: Optional[float] = 10.0
    param_scope: str = "auto"

    # second-order solvers
    damping: float = 0.01
    bs: int = 32
    scif_contrast: str = "demote"  # modified sample: "demote" the forgotten item or "resample" the positive
    cg_tol: float = 1e-5
    cg_max_iters: int = 100
    truncate_negative_curvature: bool = True  # Newton-CG: stop CG at the first non-positive curvature direction

    gif_hop_d: int = 2
    gif_scale: float = 50.0
    gif_damping: float = 0.01
    gif_iters: int = 50
    gif_graph_policy: str = "strict"  # "strict": graph models only; "bipartite": derive from interactions

    ceu_lambda: float = 0.01
    ceu_sigma: float = 0.0
    ceu_finetune_steps: int = 5

    idea_damping: float = 0.01
    idea_sigma: float = 0.0
    epsilon: float = 1.0
    delta: float = 1e-4

    # first-order methods
    learning_rate: float = 1e-3
    finetune_batch_size: int = 64
    repair_epochs: int = 1
    repair_sample_budget: int = 256

    kookmin_init_rate: float = 1e-4
    kookmin_lr_scale: float = 0.1
    kookmin_frozen_scale: float = 0.1
    kookmin_workload: int = 8

    seif_sigma: float = 0.6

    fanchuan_rounds: int = 1
    fanchuan_temperature: float = 0.5
    fanchuan_kl_steps: int = 1
    fanchuan_contrastive_steps: int = 1
    fanchuan_lr: float = 1e-2

    # retain sampling per step
    retain_cap: int = 1024
    retain_frac_cap: float = 0.05

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.param_scope not in PARAM_SCOPES:
            raise ConfigError(f"unknown param_scope {self.param_scope!r}")
        if self.max_norm is not None and self.max_norm <= 0:
            raise ConfigError("max_norm must be positive or None")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if not 0 <= self.delta < 1:
            raise ConfigError("delta must be in [0, 1)")
        for name in ("ceu_sigma", "idea_sigma", "seif_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.kookmin_init_rate < 1:
            raise ConfigError("kookmin_init_rate must be in [0, 1)")
        if not 0 < self.kookmin_lr_scale <= 1:
            raise ConfigError("kookmin_lr_scale must be in (0, 1]")
        if self.gif_graph_policy not in ("strict", "bipartite"):
            raise ConfigError("gif_graph_policy must be 'strict' or 'bipartite'")
        if self.scif_contrast not in ("demote", "resample"):
            raise ConfigError("scif_contrast must be 'demote' or 'resample'")
        if not 0 < self.retain_frac_cap <= 1:
            raise ConfigError("retain_frac_cap must be in (0, 1]")
        if self.bs < 0 or self.gif_hop_d < 0:
            raise ConfigError("bs and gif_hop_d must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepOutcome:
    params_after: ParamVector
    status: str  # "ok" | "diverged" | "not_applicable"
    wall_clock: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def update_norm(self) -> float:
        return float(self.diagnostics.get("update_norm", 0.0))

    @property
    def clipped(self) -> bool:
        return bool(self.diagnostics.get("clipped", False))
