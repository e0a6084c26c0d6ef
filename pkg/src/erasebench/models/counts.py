"""Count-based baselines (popularity, random, item-KNN) and their exact unlearning."""

from __future__ import annotations

import numpy as np

from ..core_math import ContractViolation, ParamVector, stream
from ..data import ForgetBatch
from .base import Checkpoint, ModelHyper, RecModel


class PopModel(RecModel):
    kind = "pop"

    def __init__(self, user_count: int, item_count: int, counts: np.ndarray):
        self.user_count = int(user_count)
        self.item_count = int(item_count)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.provenance: dict = {}

    @classmethod
    def fit(cls, dataset) -> "PopModel":
        return cls(dataset.user_count, dataset.item_count,
                   np.bincount(dataset.train_items, minlength=dataset.item_count))

    def score_users(self, users) -> np.ndarray:
        return np.broadcast_to(self.counts.astype(np.float64), (len(users), self.item_count)).copy()

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(self.kind, ModelHyper().to_dict(), ParamVector(np.zeros(0), []),
                          {"popularity": self.counts.astype(np.float64)}, {}, dict(self.provenance),
                          {"user_count": self.user_count, "item_count": self.item_count})


class RandomModel(RecModel):
    """Uniformly random scores, reproducible per (seed, user)."""

    kind = "random"

    def __init__(self, user_count: int, item_count: int, seed: int = 0):
        self.user_count = int(user_count)
        self.item_count = int(item_count)
        self.seed = int(seed)
        self.provenance: dict = {}

    def score_users(self, users) -> np.ndarray:
        return np.stack([stream(self.seed, "random-model", int(u)).random(self.item_count) for u in users])

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(self.kind, ModelHyper().to_dict(), ParamVector(np.zeros(0), []), {},
                          {"seed": self.seed}, dict(self.provenance),
                          {"user_count": self.user_count, "item_count": self.item_count})


class ItemKNNModel(RecModel):
    """Item-based neighbourhood model.

    Similarity is the cosine between binary item columns of the user-item
    matrix, i.e. ``C_ij / sqrt(C_ii C_jj)`` with ``C`` the item co-occurrence
    table. A user's score for item ``i`` sums the similarities of ``i`` to the
    items in that user's history.
    """

    kind = "item_knn"

    def __init__(self, user_count: int, item_count: int, user_items: np.ndarray, cooc: np.ndarray):
        self.user_count = int(user_count)
        self.item_count = int(item_count)
        self.user_items = np.asarray(user_items, dtype=np.int64)
        self.cooc = np.asarray(cooc, dtype=np.int64)
        self.provenance: dict = {}

    @classmethod
    def fit(cls, dataset) -> "ItemKNNModel":
        ui = np.zeros((dataset.user_count, dataset.item_count), dtype=np.int64)
        np.add.at(ui, (dataset.train_users, dataset.train_items), 1)
        b = (ui > 0).astype(np.float64)
        cooc = np.rint(b.T @ b).astype(np.int64)
        return cls(dataset.user_count, dataset.item_count, ui, cooc)

    @property
    def counts(self) -> np.ndarray:
        return self.user_items.sum(axis=0)

    def similarity(self) -> np.ndarray:
        diag = np.diag(self.cooc).astype(np.float64)
        denom = np.sqrt(np.outer(diag, diag))
        with np.errstate(divide="ignore", invalid="ignore"):
            sim = np.where(denom > 0, self.cooc / denom, 0.0)
        np.fill_diagonal(sim, 0.0)
        return sim

    def score_users(self, users) -> np.ndarray:
        b = (self.user_items[np.asarray(users, dtype=np.int64)] > 0).astype(np.float64)
        return b @ self.similarity()

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(self.kind, ModelHyper().to_dict(), ParamVector(np.zeros(0), []),
                          {"user_items": self.user_items.astype(np.float64),
                           "cooccurrence": self.cooc.astype(np.float64)},
                          {}, dict(self.provenance),
                          {"user_count": self.user_count, "item_count": self.item_count})


def exact_unlearn_counts(model, batch: ForgetBatch):
    """Remove ``batch`` from a count model by decrementing its tables.

    The result equals refitting the model on the retain set, field by field.
    """
    if not isinstance(model, (PopModel, ItemKNNModel)):
        raise ContractViolation(f"exact count unlearning does not apply to {model.kind!r}")
    if not batch.interactions:
        return model
    items = np.asarray(batch.items, dtype=np.int64)
    if isinstance(model, PopModel):
        counts = model.counts - np.bincount(items, minlength=model.item_count)
        if np.any(counts < 0):
            raise ContractViolation("popularity count would drop below zero")
        out = PopModel(model.user_count, model.item_count, counts)
        out.provenance = dict(model.provenance)
        return out

    users = np.asarray(batch.users, dtype=np.int64)
    ui = model.user_items.copy()
    np.subtract.at(ui, (users, items), 1)
    if np.any(ui[users, items] < 0):
        raise ContractViolation("user-item count would drop below zero")
    cooc = model.cooc.copy()
    for u in sorted(batch.owners):
        old = (model.user_items[u] > 0).astype(np.int64)
        new = (ui[u] > 0).astype(np.int64)
        cooc -= np.outer(old, old)
        cooc += np.outer(new, new)
    if np.any(cooc < 0):
        raise ContractViolation("co-occurrence count would drop below zero")
    out = ItemKNNModel(model.user_count, model.item_count, ui, cooc)
    out.provenance = dict(model.provenance)
    return out
