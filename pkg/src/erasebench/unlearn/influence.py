"""Second-order unlearning: SCIF, GIF, CEU and IDEA.

All four compute an influence-style parameter update on a subset of the
coordinates, solve an inverse-Hessian system matrix-free, optionally clip
the update and check for non-finite values before touching the model.
Each algorithm has an ``*_update`` core that works on explicit sample sets
(usable with any model exposing ``loss_grad``/``hvp``, including the
quadratic reference model) and a ``*_step`` wrapper that derives those
sample sets from a dataset and a forget batch.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from ..core_math import (
    ContractViolation,
    HvpOracle,
    SolveReport,
    cg_solve,
    clip_by_norm,
    finite_check,
    neumann_inverse_hvp,
    stream,
)
from ..data import Dataset, ForgetBatch, RetainSample, apply_forget
from ..models.base import SampleSet
from ..models.embedding import LightGCN
from ..models.training import NegativeSampler
from .config import AlgoConfig, ConfigError, StepOutcome


# -- shared helpers -----------------------------------------------------------

def resolve_scope(model, cfg: AlgoConfig) -> np.ndarray:
    """Coordinate mask of the parameters an algorithm may update.

    ``auto`` maps SCIF to the user embeddings when the model has them and
    everything else to all trainable parameters.
    """
    params = model.params
    scope = cfg.param_scope
    if scope == "auto":
        scope = "user_embedding_only" if (cfg.algorithm == "scif" and "user_embedding" in params.names) else "all"
    if scope == "all":
        return np.ones(params.size, dtype=bool)
    name = "user_embedding" if scope == "user_embedding_only" else "item_embedding"
    if name not in params.names:
        raise ContractViolation(f"model {getattr(model, 'kind', '?')!r} has no segment {name!r}")
    return params.mask([name])


def restricted_oracle(model, samples: SampleSet, coefficients, mask: np.ndarray, damping: float) -> HvpOracle:
    """HVP of the weighted loss restricted to the masked coordinates (principal submatrix)."""
    full = np.zeros(model.params.size)

    def apply(v):
        full[:] = 0.0
        full[mask] = v
        return model.hvp(samples, coefficients, full)[mask]

    return HvpOracle(apply, int(mask.sum()), damping)


def _unchanged(model, status="ok", **diag) -> StepOutcome:
    diag.setdefault("update_norm", 0.0)
    diag.setdefault("clipped", False)
    return StepOutcome(model.params.copy(), status, 0.0, diag)


def _apply_update(model, mask, delta, cfg: AlgoConfig, report: SolveReport | None, extra=None) -> StepOutcome:
    diag = {"solver_report": report.to_dict() if report is not None else None}
    diag.update(extra or {})
    if finite_check(delta) != "ok":
        return _unchanged(model, "diverged", **diag)
    clipped = False
    if cfg.max_norm is not None:
        norm_before = float(np.linalg.norm(delta))
        delta = clip_by_norm(delta, cfg.max_norm)
        clipped = norm_before > cfg.max_norm
    values = model.params.values.copy()
    values[mask] += delta
    if finite_check(values) != "ok":
        return _unchanged(model, "diverged", **diag)
    diag.update(update_norm=float(np.linalg.norm(delta)), clipped=clipped)
    return StepOutcome(model.params.with_values(values), "ok", 0.0, diag)


def forget_samples(dataset: Dataset, batch: ForgetBatch, rng) -> SampleSet:
    """Forget interactions as ``(user, item, negative)`` triples with uniform unseen negatives."""
    if not batch.interactions:
        return SampleSet.empty()
    pos = dataset.positions_of(batch.interactions)
    users = dataset.train_users[pos]
    items = dataset.train_items[pos]
    return NegativeSampler(dataset).triples(users, items, rng)


def retain_samples(dataset: Dataset, retain: RetainSample, rng, limit: int | None = None) -> SampleSet:
    pos = retain.positions
    if limit is not None and pos.size > limit:
        pos = np.sort(rng.choice(pos, size=limit, replace=False))
    if pos.size == 0:
        return SampleSet.empty()
    return NegativeSampler(dataset).triples(dataset.train_users[pos], dataset.train_items[pos], rng)


def all_train_samples(dataset: Dataset, rng) -> tuple[SampleSet, np.ndarray]:
    """Every train interaction as a triple, plus the surrogate ids in the same order."""
    return NegativeSampler(dataset).triples(dataset.train_users, dataset.train_items, rng), dataset.train_ids


# -- SCIF -------------------------------------------------------------------

def scif_update(model, forget: SampleSet, modified: SampleSet, retain: SampleSet, cfg: AlgoConfig,
                mask: np.ndarray | None = None) -> StepOutcome:
    """Newton step on ``(-sum l(z) + sum l(z_bar) + sum l(z_i)) / (2 n_f + bs)``.

    With one forget sample the normalizer is ``2 + bs``. The Hessian is that
    of the same weighted objective, plus ``cfg.damping``.
    """
    if len(forget) == 0:
        return _unchanged(model)
    if len(modified) != len(forget):
        raise ContractViolation("need one modified sample per forget sample")
    mask = resolve_scope(model, cfg) if mask is None else mask
    samples = forget.concat(modified).concat(retain)
    denom = 2 * len(forget) + len(retain)
    coeffs = np.concatenate([
        -np.ones(len(forget)), np.ones(len(modified)), np.ones(len(retain))
    ]) / denom
    _, grad = model.loss_grad(samples, coeffs)
    rhs = grad[mask]
    if finite_check(rhs) != "ok":
        return _unchanged(model, "diverged", solver_report=None)
    report = cg_solve(restricted_oracle(model, samples, coeffs, mask, cfg.damping), rhs, cfg.cg_tol, cfg.cg_max_iters,
                      truncate_on_negative_curvature=cfg.truncate_negative_curvature)
    if report.status == "diverged":
        return _unchanged(model, "diverged", solver_report=report.to_dict())
    return _apply_update(model, mask, -report.solution, cfg, report)


def modified_samples(dataset: Dataset, forget: SampleSet, rng, mode: str = "demote") -> SampleSet:
    """The modified counterpart of each forget triple ``(u, i, j)``.

    ``demote``: ``(u, r, i)`` with ``r`` a freshly drawn unseen item, so the
    forgotten item becomes the negative. ``resample``: ``(u, r, j)``, the
    positive swapped for ``r`` and the negative kept.
    """
    if len(forget) == 0:
        return SampleSet.empty()
    replacement = NegativeSampler(dataset).sample(forget.users, rng, avoid=forget.pos)
    if mode == "demote":
        return SampleSet(forget.users, replacement, forget.pos)
    if mode == "resample":
        clash = replacement == forget.neg
        if clash.any():
            replacement = replacement.copy()
            replacement[clash] = NegativeSampler(dataset).sample(forget.users[clash], rng, avoid=forget.neg[clash])
        return SampleSet(forget.users, replacement, forget.neg)
    raise ConfigError(f"unknown scif_contrast {mode!r}")


def scif_step(model, forget: ForgetBatch, retain: RetainSample, cfg: AlgoConfig, dataset: Dataset,
              rng: np.random.Generator) -> StepOutcome:
    if not model.has_gradients:
        return _unchanged(model, "not_applicable")
    z = forget_samples(dataset, forget, rng)
    z_bar = modified_samples(dataset, z, rng, cfg.scif_contrast)
    retain_set = retain_samples(dataset, retain, rng, limit=cfg.bs)
    return scif_update(model, z, z_bar, retain_set, cfg)


# -- GIF --------------------------------------------------------------------

def bipartite_adjacency(dataset: Dataset) -> sp.csr_matrix:
    keys = dataset.interaction_keys()
    u = keys // dataset.item_count
    i = keys % dataset.item_count + dataset.user_count
    n = dataset.user_count + dataset.item_count
    rows, cols = np.concatenate([u, i]), np.concatenate([i, u])
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))


def hop_distances(adj: sp.csr_matrix, sources, max_depth: int) -> np.ndarray:
    """Multi-source BFS distances up to ``max_depth``; unreachable nodes get -1."""
    n = adj.shape[0]
    dist = np.full(n, -1, dtype=np.int64)
    frontier = np.zeros(n, dtype=bool)
    frontier[np.asarray(sorted(sources), dtype=np.int64)] = True
    dist[frontier] = 0
    for depth in range(1, max_depth + 1):
        reached = (adj @ frontier.astype(np.float64)) > 0
        frontier = reached & (dist < 0)
        if not frontier.any():
            break
        dist[frontier] = depth
    return dist


def gif_nodes(dataset: Dataset, batch: ForgetBatch, d: int) -> np.ndarray:
    """Forget nodes plus every node closer than ``d`` hops to one of them."""
    sources = set(batch.users) | {dataset.user_count + i for i in batch.items}
    if not sources:
        return np.zeros(0, dtype=np.int64)
    dist = hop_distances(bipartite_adjacency(dataset), sources, max(d - 1, 0))
    return np.flatnonzero(dist >= 0)


def gif_step(model, dataset: Dataset, forget: ForgetBatch, cfg: AlgoConfig, rng: np.random.Generator) -> StepOutcome:
    """Influence update on the ``d``-hop neighbourhood via a Neumann-series inverse HVP."""
    is_graph = isinstance(model, LightGCN)
    if not model.has_gradients or not hasattr(model, "node_mask"):
        return _unchanged(model, "not_applicable")
    if not is_graph and cfg.gif_graph_policy == "strict":
        return _unchanged(model, "not_applicable")
    if not forget.interactions:
        return _unchanged(model)

    nodes = gif_nodes(dataset, forget, cfg.gif_hop_d)
    mask = model.node_mask(nodes)
    pruned_ds = apply_forget(dataset, forget)
    pruned_model = model.rebuild_graph(pruned_ds) if is_graph else model

    samples, ids = all_train_samples(dataset, rng)
    keep = ~np.isin(ids, forget.sorted_ids)
    pruned = samples.take(np.flatnonzero(keep))
    w = 1.0 / len(samples)
    _, g_orig = model.loss_grad(samples, np.full(len(samples), w))
    _, g_pruned = pruned_model.loss_grad(pruned, np.full(len(pruned), w))
    v = (g_orig - g_pruned)[mask]
    if finite_check(v) != "ok":
        return _unchanged(model, "diverged", solver_report=None)
    oracle = restricted_oracle(pruned_model, pruned, np.full(len(pruned), w), mask, 0.0)
    report = neumann_inverse_hvp(oracle, v, cfg.gif_scale, cfg.gif_damping, cfg.gif_iters)
    if report.status == "diverged":
        return _unchanged(model, "diverged", solver_report=report.to_dict())
    return _apply_update(model, mask, report.solution, cfg, report, {"mask_nodes": int(nodes.size)})


# -- CEU --------------------------------------------------------------------

def ceu_update(model, forget: SampleSet, retain: SampleSet, cfg: AlgoConfig, seed: int = 0, step: int = 0,
               mask: np.ndarray | None = None) -> StepOutcome:
    """Certified edge unlearning.

    1. If ``ceu_sigma > 0``: draw ``b ~ N(0, ceu_sigma^2 I)`` and run
       ``ceu_finetune_steps`` gradient steps on the retain loss plus ``b . theta``.
    2. Influence update ``x = (H_retain + ceu_lambda I)^-1 grad L_forget`` with
       both losses weighted by ``1 / (n_forget + n_retain)``.
    3. Clip ``x`` to ``max_norm``; apply ``theta + x``.
    4. Add certification noise ``N(0, ceu_sigma^2)`` to the updated coordinates.
    """
    if len(forget) == 0:
        return _unchanged(model)
    mask = resolve_scope(model, cfg) if mask is None else mask
    sigma = cfg.ceu_sigma
    w = 1.0 / (len(forget) + len(retain))
    work = model
    if sigma > 0 and cfg.ceu_finetune_steps > 0 and len(retain):
        b = stream(seed, step, "ceu-linear-noise").normal(0.0, sigma, size=int(mask.sum()))
        values = model.params.values.copy()
        for _ in range(cfg.ceu_finetune_steps):
            _, g = work.loss_grad(retain, np.full(len(retain), w), values=values)
            values[mask] -= cfg.learning_rate * (g[mask] + b)
        if finite_check(values) != "ok":
            return _unchanged(model, "diverged")
        work = model.with_values(values)

    _, g_forget = work.loss_grad(forget, np.full(len(forget), w))
    rhs = g_forget[mask]
    oracle = restricted_oracle(work, retain, np.full(len(retain), w), mask, cfg.ceu_lambda)
    report = cg_solve(oracle, rhs, cfg.cg_tol, cfg.cg_max_iters)
    if report.status == "diverged":
        return _unchanged(model, "diverged", solver_report=report.to_dict())
    outcome = _apply_update(work, mask, report.solution, cfg, report)
    if outcome.status != "ok" or sigma == 0:
        return outcome
    values = outcome.params_after.values
    values[mask] += stream(seed, step, "ceu-certification").normal(0.0, sigma, size=int(mask.sum()))
    if finite_check(values) != "ok":
        return _unchanged(model, "diverged")
    return outcome


def ceu_step(model, forget: ForgetBatch, retain: RetainSample, cfg: AlgoConfig, dataset: Dataset,
             rng: np.random.Generator, seed: int = 0, step: int = 0) -> StepOutcome:
    if not model.has_gradients:
        return _unchanged(model, "not_applicable")
    return ceu_update(model, forget_samples(dataset, forget, rng), retain_samples(dataset, retain, rng), cfg, seed, step)


# -- IDEA -------------------------------------------------------------------

def gaussian_mechanism_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Noise scale ``sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon`` of the Gaussian mechanism."""
    if delta <= 0 or epsilon <= 0:
        raise ConfigError("the Gaussian mechanism needs epsilon > 0 and delta > 0")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def idea_update(model, pruned_model, original: SampleSet, pruned: SampleSet, cfg: AlgoConfig, weight: float,
                seed: int = 0, step: int = 0, mask: np.ndarray | None = None) -> StepOutcome:
    """``x = (H_pruned + idea_damping I)^-1 (grad L_original - grad L_pruned)``, then certified noise."""
    sigma_floor = cfg.idea_sigma
    if cfg.delta == 0 or cfg.epsilon == 0:
        raise ConfigError("IDEA needs epsilon > 0 and delta > 0")
    mask = resolve_scope(model, cfg) if mask is None else mask
    _, g_orig = model.loss_grad(original, np.full(len(original), weight))
    _, g_pruned = pruned_model.loss_grad(pruned, np.full(len(pruned), weight))
    v = (g_orig - g_pruned)[mask]
    if finite_check(v) != "ok":
        return _unchanged(model, "diverged", solver_report=None)
    if np.any(v):
        oracle = restricted_oracle(pruned_model, pruned, np.full(len(pruned), weight), mask, cfg.idea_damping)
        report = cg_solve(oracle, v, cfg.cg_tol, cfg.cg_max_iters)
        if report.status == "diverged":
            return _unchanged(model, "diverged", solver_report=report.to_dict())
        x = report.solution
    else:
        report, x = None, np.zeros(int(mask.sum()))
    outcome = _apply_update(model, mask, x, cfg, report)
    if outcome.status != "ok":
        return outcome
    sigma = max(sigma_floor, gaussian_mechanism_sigma(outcome.update_norm, cfg.epsilon, cfg.delta))
    outcome.diagnostics["noise_sigma"] = sigma
    if sigma > 0:
        values = outcome.params_after.values
        values[mask] += stream(seed, step, "idea-certification").normal(0.0, sigma, size=int(mask.sum()))
        if finite_check(values) != "ok":
            return _unchanged(model, "diverged")
    return outcome


def idea_step(model, dataset: Dataset, forget: ForgetBatch, cfg: AlgoConfig, rng: np.random.Generator,
              seed: int = 0, step: int = 0) -> StepOutcome:
    if not model.has_gradients:
        return _unchanged(model, "not_applicable")
    samples, ids = all_train_samples(dataset, rng)
    keep = ~np.isin(ids, forget.sorted_ids)
    pruned = samples.take(np.flatnonzero(keep))
    pruned_model = model
    if isinstance(model, LightGCN) and forget.interactions:
        pruned_model = model.rebuild_graph(apply_forget(dataset, forget))
    return idea_update(model, pruned_model, samples, pruned, cfg, 1.0 / len(samples), seed, step)
