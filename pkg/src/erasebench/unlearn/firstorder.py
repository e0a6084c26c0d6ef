"""First-order unlearning: Kookmin (reset + fine-tune), Seif (noise + repair) and Fanchuan
(pseudo-label KL + contrastive push + repair)."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import log_softmax, softmax

from ..core_math import ParamVector, finite_check, gaussian_perturb
from ..models.base import SampleSet
from ..models.training import Adam
from .config import AlgoConfig, StepOutcome


def _diverged(model, **diag) -> StepOutcome:
    diag.setdefault("update_norm", 0.0)
    diag.setdefault("clipped", False)
    return StepOutcome(model.params.copy(), "diverged", 0.0, diag)


def _finish(model, values: np.ndarray, **diag) -> StepOutcome:
    if finite_check(values) != "ok":
        return _diverged(model, **diag)
    diag.setdefault("update_norm", float(np.linalg.norm(values - model.params.values)))
    diag.setdefault("clipped", False)
    return StepOutcome(model.params.with_values(values), "ok", 0.0, diag)


def _clip_grad(grad: np.ndarray, max_norm) -> tuple[np.ndarray, bool]:
    if max_norm is None:
        return grad, False
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm), True
    return grad, False


def finetune(model, values: np.ndarray, samples: SampleSet, cfg: AlgoConfig, epochs: int, rng,
             lr=None, max_steps: int | None = None) -> tuple[np.ndarray, bool]:
    """Adam on the mean BPR loss of ``samples``; ``lr`` may be a per-coordinate array.

    Returns the new values and whether any gradient was clipped.
    """
    if len(samples) == 0 or epochs <= 0:
        return values, False
    opt = Adam(values.size, lr=cfg.learning_rate if lr is None else lr)
    bsz = max(1, int(cfg.finetune_batch_size))
    clipped = False
    steps = 0
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        for start in range(0, order.size, bsz):
            if max_steps is not None and steps >= max_steps:
                return values, clipped
            batch = samples.take(order[start:start + bsz])
            _, g = model.loss_grad(batch, np.full(len(batch), 1.0 / len(batch)), values=values)
            g, c = _clip_grad(g, cfg.max_norm)
            clipped |= c
            values = opt.step(values, g)
            steps += 1
            if finite_check(values) != "ok":
                return values, clipped
    return values, clipped


def _budget(samples: SampleSet, budget: int, rng) -> SampleSet:
    if len(samples) <= budget:
        return samples
    return samples.take(np.sort(rng.choice(len(samples), size=budget, replace=False)))


# -- Kookmin ----------------------------------------------------------------

def kookmin_select(params: ParamVector, agreement: np.ndarray, rate: float) -> np.ndarray:
    """Per segment, the ``ceil(rate * length)`` coordinates with the highest agreement.

    Ties go to the lower coordinate index. Returns sorted flat indices.
    """
    chosen = []
    for name, offset, length in params.segments:
        n = min(length, math.ceil(rate * length)) if rate > 0 else 0
        if n == 0:
            continue
        seg = agreement[offset:offset + length]
        order = np.lexsort((np.arange(length), -seg))
        chosen.append(offset + np.sort(order[:n]))
    if not chosen:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(chosen)


def kookmin_reset(model, forget: SampleSet, retain: SampleSet, cfg: AlgoConfig, init_snapshot) -> tuple[np.ndarray, np.ndarray]:
    """Reset the coordinates where forget and retain gradients agree most; no fine-tuning."""
    values = model.params.values.copy()
    _, g_f = model.loss_grad(forget, np.full(len(forget), 1.0 / max(len(forget), 1)))
    _, g_r = model.loss_grad(retain, np.full(len(retain), 1.0 / max(len(retain), 1)))
    agreement = np.sign(g_f) * np.sign(g_r) * np.abs(g_f * g_r)
    idx = kookmin_select(model.params, agreement, cfg.kookmin_init_rate)
    values[idx] = np.asarray(init_snapshot, dtype=np.float64)[idx]
    return values, idx


def kookmin_step(model, forget: SampleSet, retain: SampleSet, cfg: AlgoConfig, init_snapshot,
                 rng: np.random.Generator) -> StepOutcome:
    """Reset then fine-tune: reset coordinates at ``learning_rate * kookmin_lr_scale``, the rest
    a further ``kookmin_frozen_scale`` lower; ``kookmin_workload`` steps per forget mini-batch."""
    if not model.has_gradients:
        return StepOutcome(model.params.copy(), "not_applicable", 0.0, {"update_norm": 0.0, "clipped": False})
    if len(forget) == 0:
        return _finish(model, model.params.values.copy())
    values, idx = kookmin_reset(model, forget, retain, cfg, init_snapshot)
    if finite_check(values) != "ok":
        return _diverged(model)
    base = cfg.learning_rate * cfg.kookmin_lr_scale
    lr = np.full(values.size, base * cfg.kookmin_frozen_scale)
    lr[idx] = base
    steps = cfg.kookmin_workload * math.ceil(len(forget) / max(1, cfg.finetune_batch_size))
    values, clipped = finetune(model, values, retain, cfg, epochs=max(1, cfg.repair_epochs), rng=rng,
                               lr=lr, max_steps=steps)
    return _finish(model, values, reset_count=int(idx.size), clipped=clipped)


# -- Seif -------------------------------------------------------------------

def seif_step(model, retain: SampleSet, cfg: AlgoConfig, rng: np.random.Generator, seed: int = 0,
              step: int = 0) -> StepOutcome:
    """Perturb every embedding segment with ``N(0, seif_sigma^2)``, then repair on a bounded retain subset."""
    if not model.has_gradients:
        return StepOutcome(model.params.copy(), "not_applicable", 0.0, {"update_norm": 0.0, "clipped": False})
    noisy = gaussian_perturb(model.params, cfg.seif_sigma, None, seed=seed, step=step)
    repair = _budget(retain, cfg.repair_sample_budget, rng)
    values, clipped = finetune(model, noisy.values.copy(), repair, cfg, cfg.repair_epochs, rng)
    return _finish(model, values, clipped=clipped)


# -- Fanchuan ---------------------------------------------------------------

class ShuffledPool:
    """Draw items without replacement; reshuffle once every item has been drawn."""

    def __init__(self, items, rng: np.random.Generator):
        self.items = list(items)
        self.rng = rng
        self._order: list[int] = []

    def __len__(self):
        return len(self.items)

    def draw(self):
        if not self.items:
            raise IndexError("empty pool")
        if not self._order:
            self._order = list(self.rng.permutation(len(self.items)))
        return self.items[self._order.pop()]


def retain_pool(samples: SampleSet, batch_size: int, rng: np.random.Generator) -> ShuffledPool:
    order = rng.permutation(len(samples))
    batches = [samples.take(np.sort(order[s:s + batch_size])) for s in range(0, order.size, max(1, batch_size))]
    return ShuffledPool(batches, rng)


def uniform_kl(scores: np.ndarray) -> float:
    """Mean over rows of ``KL(softmax(row) || uniform)``."""
    logp = log_softmax(scores, axis=1)
    return float(np.mean(np.sum(np.exp(logp) * logp, axis=1) + math.log(scores.shape[1])))


def _kl_grad(model, users: np.ndarray, values: np.ndarray) -> tuple[float, np.ndarray]:
    m = model.with_values(values)
    s = m.score_users(users)
    logp = log_softmax(s, axis=1)
    p = np.exp(logp)
    ent = np.sum(p * logp, axis=1, keepdims=True)
    d_s = p * (logp - ent) / users.size
    kl = float(np.mean(ent[:, 0] + math.log(s.shape[1])))
    return kl, m.score_backward(users, d_s)


def _contrastive_grad(model, forget_users: np.ndarray, retain_users: np.ndarray, values, temperature: float):
    """Gradient of ``mean_f logsumexp_r(cos(e_f, e_r) / t)`` with retain representations held fixed."""
    m = model.with_values(values)
    eu, _ = m.embeddings()
    a = eu[forget_users]
    b = eu[retain_users]
    na = np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    nb = np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    cos = (a / na) @ (b / nb).T
    w = softmax(cos / temperature, axis=1) / temperature  # d loss / d cos, per forget row
    bn = b / nb
    # d cos_fr / d a_f = bn_r / |a_f| - cos_fr * a_f / |a_f|^2
    d_a = (w @ bn) / na - (np.sum(w * cos, axis=1, keepdims=True)) * a / na**2
    return m.user_rep_backward(forget_users, d_a / forget_users.size)


def fanchuan_step(model, forget: SampleSet, pool: ShuffledPool | None, cfg: AlgoConfig,
                  rng: np.random.Generator) -> StepOutcome:
    """Phase 1: push forget users' item distributions to uniform. Phase 2, per round:
    contrastive push away from pooled retain users, then repair on a bounded retain subset."""
    if not model.has_gradients or not hasattr(model, "score_backward"):
        return StepOutcome(model.params.copy(), "not_applicable", 0.0, {"update_norm": 0.0, "clipped": False})
    values = model.params.values.copy()
    if len(forget) == 0:
        return _finish(model, values)
    users = np.unique(forget.users)
    clipped = False
    kl_before = None
    for _ in range(cfg.fanchuan_kl_steps):
        kl, g = _kl_grad(model, users, values)
        kl_before = kl if kl_before is None else kl_before
        g, c = _clip_grad(g, cfg.max_norm)
        clipped |= c
        values = values - cfg.fanchuan_lr * g
        if finite_check(values) != "ok":
            return _diverged(model)
    for _ in range(cfg.fanchuan_rounds):
        if pool is None or not len(pool):
            break
        for _ in range(cfg.fanchuan_contrastive_steps):
            batch = pool.draw()
            r_users = np.setdiff1d(np.unique(batch.users), users)
            if r_users.size == 0:
                continue
            g = _contrastive_grad(model, users, r_users, values, cfg.fanchuan_temperature)
            g, c = _clip_grad(g, cfg.max_norm)
            clipped |= c
            values = values - cfg.fanchuan_lr * g
        drawn, total = [], 0
        while total < cfg.repair_sample_budget and len(drawn) < len(pool):
            b = pool.draw()
            drawn.append(b)
            total += len(b)
        if drawn:
            repair = drawn[0]
            for b in drawn[1:]:
                repair = repair.concat(b)
            repair = _budget(repair, cfg.repair_sample_budget, rng)
            values, c = finetune(model, values, repair, cfg, 1, rng)
            clipped |= c
        if finite_check(values) != "ok":
            return _diverged(model)
    return _finish(model, values, clipped=clipped, kl_before=kl_before)
