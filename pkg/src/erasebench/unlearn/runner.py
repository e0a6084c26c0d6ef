"""Sequential unlearning: apply one algorithm step per forget batch, each on the previous result."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core_math import ContractViolation, stream
from ..data import Dataset, ForgetBatch, apply_forget, sample_retain
from ..models.counts import ItemKNNModel, PopModel, exact_unlearn_counts
from ..models.embedding import LightGCN
from .config import AlgoConfig, StepOutcome
from .firstorder import fanchuan_step, kookmin_step, retain_pool, seif_step
from .influence import ceu_step, forget_samples, gif_step, idea_step, retain_samples, scif_step

POLICIES = ("halt_on_diverge", "continue")


def params_digest(params) -> str:
    h = hashlib.sha256()
    for name, offset, length in params.segments:
        h.update(f"{name}:{offset}:{length};".encode())
    h.update(np.ascontiguousarray(params.values, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class TrajectoryStep:
    step: int
    outcome: StepOutcome
    cumulative_forget: int
    retain_users: tuple[int, ...] = ()
    retain_size: int = 0


@dataclass
class Trajectory:
    initial_digest: str
    steps: list[TrajectoryStep] = field(default_factory=list)
    model: object = None
    dataset: Optional[Dataset] = None
    algorithm: str = ""

    def __len__(self):
        return len(self.steps)

    @property
    def status(self) -> str:
        statuses = [s.outcome.status for s in self.steps]
        if "diverged" in statuses:
            return "diverged"
        if statuses and all(s == "not_applicable" for s in statuses):
            return "not_applicable"
        return "ok"

    @property
    def total_wall_clock(self) -> float:
        return float(sum(s.outcome.wall_clock for s in self.steps))

    @property
    def avg_wall_clock(self) -> float:
        return self.total_wall_clock / len(self.steps) if self.steps else 0.0

    @property
    def final_params(self):
        return self.model.params


def _check_requests(dataset: Dataset, batches) -> None:
    seen: set[int] = set()
    for b in batches:
        if seen & b.interactions:
            raise ContractViolation("forget batches must be pairwise disjoint")
        seen |= b.interactions
    if seen:
        dataset.positions_of(sorted(seen))  # raises if any id is not in train


def unlearn_step(model, dataset: Dataset, batch: ForgetBatch, retain, cfg: AlgoConfig,
                 rng: np.random.Generator, seed: int, step: int) -> tuple[StepOutcome, object]:
    """One request: returns the outcome and the model to continue with.

    Count-based models are unlearned exactly regardless of ``cfg.algorithm``.
    """
    if isinstance(model, (PopModel, ItemKNNModel)):
        new = exact_unlearn_counts(model, batch)
        return StepOutcome(new.params, "ok", 0.0, {"update_norm": 0.0, "clipped": False, "exact": True}), new
    if not model.has_gradients:
        return StepOutcome(model.params.copy(), "ok", 0.0, {"update_norm": 0.0, "clipped": False}), model

    algo = cfg.algorithm
    if algo == "scif":
        out = scif_step(model, batch, retain, cfg, dataset, rng)
    elif algo == "gif":
        out = gif_step(model, dataset, batch, cfg, rng)
    elif algo == "ceu":
        out = ceu_step(model, batch, retain, cfg, dataset, rng, seed, step)
    elif algo == "idea":
        out = idea_step(model, dataset, batch, cfg, rng, seed, step)
    elif algo == "kookmin":
        out = kookmin_step(model, forget_samples(dataset, batch, rng), retain_samples(dataset, retain, rng),
                           cfg, model.init_values, rng)
    elif algo == "seif":
        out = seif_step(model, retain_samples(dataset, retain, rng), cfg, rng, seed, step)
    elif algo == "fanchuan":
        pool = retain_pool(retain_samples(dataset, retain, rng), cfg.finetune_batch_size, rng)
        out = fanchuan_step(model, forget_samples(dataset, batch, rng), pool, cfg, rng)
    else:  # guarded by AlgoConfig.validate
        raise ValueError(algo)
    new = model.with_values(out.params_after.values) if out.status == "ok" else model
    return out, new


def run_sequence(model, dataset: Dataset, requests, cfg: AlgoConfig, policy: str = "continue",
                 seed: int = 0, log_path=None) -> Trajectory:
    """Serve ``requests`` one batch at a time: ``theta_(i+1) = U(theta_i, D_r^(i), D_f^(i))``.

    ``requests`` is an ``UnlearnRequestSequence`` or a plain list of
    ``ForgetBatch``. Retain data for each step comes from complete histories
    of users that have not (yet) asked to be forgotten, including the owners
    of the current batch. After a divergence the parameters stay frozen:
    ``continue`` marks the remaining steps diverged, ``halt_on_diverge`` stops.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown divergence policy {policy!r}")
    batches = list(getattr(requests, "batches", requests))
    _check_requests(dataset, batches)

    traj = Trajectory(params_digest(model.params), algorithm=cfg.algorithm)
    unlearned: set[int] = set()
    cumulative = 0
    ds = dataset
    diverged = False
    log = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for i, batch in enumerate(batches):
            unlearned |= set(batch.owners)
            cumulative += len(batch)
            retain = sample_retain(ds, unlearned, cfg.retain_cap, cfg.retain_frac_cap, stream(seed, i, "retain"))
            if diverged:
                out = StepOutcome(model.params.copy(), "diverged", 0.0,
                                  {"update_norm": 0.0, "clipped": False, "frozen": True})
            else:
                rng = stream(seed, i, "step")
                t0 = time.perf_counter()
                out, model = unlearn_step(model, ds, batch, retain, cfg, rng, seed, i)
                out.wall_clock = time.perf_counter() - t0
            ds = apply_forget(ds, batch)
            if isinstance(model, LightGCN):
                model = model.rebuild_graph(ds)
            traj.steps.append(TrajectoryStep(i, out, cumulative, retain.users, len(retain)))
            if log is not None:
                log.write(json.dumps(step_record(traj.steps[-1], cfg.algorithm, seed), sort_keys=True) + "\n")
            if out.status == "diverged":
                diverged = True
                if policy == "halt_on_diverge":
                    break
    finally:
        if log is not None:
            log.close()
    traj.model = model
    traj.dataset = ds
    return traj


def step_record(s: TrajectoryStep, algorithm: str, seed: int) -> dict:
    return {
        "step": s.step,
        "algorithm": algorithm,
        "status": s.outcome.status,
        "update_norm": s.outcome.update_norm,
        "clipped": s.outcome.clipped,
        "wall_clock_seconds": s.outcome.wall_clock,
        "cumulative_forget_interactions": s.cumulative_forget,
        "rng_seed": seed,
    }
