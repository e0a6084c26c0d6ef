"""Training loops, negative sampling and model (de)materialization."""

from __future__ import annotations

import time

import numpy as np

from ..core_math import ContractViolation, ParamVector
from .base import COUNT_KINDS, GRADIENT_KINDS, MODEL_KINDS, Checkpoint, ModelHyper, SampleSet
from .counts import ItemKNNModel, PopModel, RandomModel
from .embedding import BPRMF, LightGCN


class NegativeSampler:
    """Uniform negatives among items the user has not interacted with in train."""

    def __init__(self, dataset, max_rounds: int = 50):
        self.item_count = dataset.item_count
        self.keys = dataset.interaction_keys()
        self.max_rounds = max_rounds

    def is_seen(self, users, items) -> np.ndarray:
        keys = np.asarray(users, dtype=np.int64) * self.item_count + np.asarray(items, dtype=np.int64)
        if not self.keys.size:
            return np.zeros(keys.size, dtype=bool)
        pos = np.minimum(np.searchsorted(self.keys, keys), self.keys.size - 1)
        return self.keys[pos] == keys

    def sample(self, users, rng: np.random.Generator, avoid=None) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        out = rng.integers(0, self.item_count, size=users.size)
        bad = self.is_seen(users, out)
        if avoid is not None:
            bad |= out == np.asarray(avoid)
        for _ in range(self.max_rounds):
            if not bad.any():
                break
            idx = np.flatnonzero(bad)
            out[idx] = rng.integers(0, self.item_count, size=idx.size)
            bad[idx] = self.is_seen(users[idx], out[idx])
            if avoid is not None:
                bad[idx] |= out[idx] == np.asarray(avoid)[idx]
        if avoid is not None and bad.any():
            # user has seen (almost) every item: fall back to any item != avoid
            idx = np.flatnonzero(out == np.asarray(avoid))
            out[idx] = (out[idx] + 1) % self.item_count
        return out

    def triples(self, users, items, rng) -> SampleSet:
        return SampleSet(users, items, self.sample(users, rng, avoid=items))


class Adam:
    def __init__(self, size: int, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, values: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return values - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _build_embedding_model(kind, dataset, hyper, seed):
    if kind == "bpr_mf":
        return BPRMF(dataset.user_count, dataset.item_count, hyper, seed=seed)
    return LightGCN(dataset.user_count, dataset.item_count, hyper, seed=seed, dataset=dataset)


def fit_embedding(model, dataset, epochs: int, rng: np.random.Generator):
    """Mini-batch Adam on the pairwise BPR loss; returns the trained copy."""
    hyper = model.hyper
    sampler = NegativeSampler(dataset)
    values = model.params.values.copy()
    opt = Adam(values.size, lr=hyper.learning_rate)
    history = []
    n = dataset.train_size
    reps = max(1, int(hyper.negatives_per_positive))
    for _ in range(epochs):
        users = np.repeat(dataset.train_users, reps)
        items = np.repeat(dataset.train_items, reps)
        samples = sampler.triples(users, items, rng)
        order = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, order.size, hyper.batch_size):
            batch = samples.take(order[start:start + hyper.batch_size])
            c = np.full(len(batch), 1.0 / len(batch))
            loss, grad = model.loss_grad(batch, c, values=values)
            values = opt.step(values, grad)
            total += loss * len(batch)
        history.append(total / max(n * reps, 1))
    trained = model.with_values(values)
    trained.loss_history = history
    return trained


def fit_model(kind: str, dataset, hyper: ModelHyper | None = None, epochs: int = 20, seed: int = 0):
    """Train a recommender of the given kind; deterministic given ``seed``."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if dataset.train_size == 0 and kind in GRADIENT_KINDS:
        raise ContractViolation("dataset has no train interactions")
    hyper = hyper or ModelHyper()
    t0 = time.perf_counter()
    if kind == "pop":
        model = PopModel.fit(dataset)
    elif kind == "item_knn":
        model = ItemKNNModel.fit(dataset)
    elif kind == "random":
        model = RandomModel(dataset.user_count, dataset.item_count, seed)
    else:
        if epochs < 1:
            raise ValueError("gradient models need epochs >= 1")
        rng = np.random.default_rng(seed)
        model = fit_embedding(_build_embedding_model(kind, dataset, hyper, seed), dataset, epochs, rng)
    model.provenance = {
        "trained_on": dataset.digest(),
        "steps_applied": 0,
        "wall_clock_train": time.perf_counter() - t0,
    }
    return model


def train(kind: str, dataset, hyper: ModelHyper | None = None, epochs: int = 20, seed: int = 0) -> Checkpoint:
    return fit_model(kind, dataset, hyper, epochs, seed).to_checkpoint()


def model_from_checkpoint(ckpt: Checkpoint, dataset=None):
    """Rebuild a model object from a checkpoint. LightGCN needs ``dataset`` for its graph."""
    n_u, n_i = ckpt.shape.get("user_count"), ckpt.shape.get("item_count")
    if ckpt.kind in ("bpr_mf", "lightgcn"):
        hyper = ModelHyper.from_dict(ckpt.hyper)
        init = ckpt.tables.get("init_snapshot")
        seed = int(ckpt.rng_state.get("seed", 0))
        params = ParamVector(ckpt.params.values.copy(), list(ckpt.params.segments))
        if ckpt.kind == "bpr_mf":
            model = BPRMF(n_u, n_i, hyper, params, init, seed)
        else:
            model = LightGCN(n_u, n_i, hyper, params, init, seed, dataset=dataset)
    elif ckpt.kind == "pop":
        model = PopModel(n_u, n_i, np.rint(ckpt.tables["popularity"]).astype(np.int64))
    elif ckpt.kind == "item_knn":
        model = ItemKNNModel(n_u, n_i, np.rint(ckpt.tables["user_items"]).astype(np.int64),
                             np.rint(ckpt.tables["cooccurrence"]).astype(np.int64))
    elif ckpt.kind == "random":
        model = RandomModel(n_u, n_i, int(ckpt.rng_state.get("seed", 0)))
    else:
        raise ValueError(f"unknown model kind {ckpt.kind!r}")
    model.provenance = dict(ckpt.provenance)
    return model


def is_count_kind(kind: str) -> bool:
    return kind in COUNT_KINDS
