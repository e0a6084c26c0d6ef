"""Shared model types: sample sets, hyperparameters, checkpoints and the ranking contract."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from ..core_math import ContractViolation, ParamVector

MODEL_KINDS = ("bpr_mf", "lightgcn", "pop", "random", "item_knn")
GRADIENT_KINDS = ("bpr_mf", "lightgcn")
COUNT_KINDS = ("pop", "item_knn")


@dataclass(frozen=True)
class SampleSet:
    """Training examples ``(user, positive_item, negative_item)``; negative -1 means absent."""

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64).reshape(-1)
        pos = np.asarray(self.pos, dtype=np.int64).reshape(-1)
        neg = np.asarray(self.neg, dtype=np.int64).reshape(-1) if self.neg is not None else np.full(users.size, -1)
        if not (users.size == pos.size == neg.size):
            raise ContractViolation("sample arrays must have equal length")
        if np.any((neg >= 0) & (neg == pos)):
            raise ContractViolation("negative item equals positive item")
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "neg", neg)

    @classmethod
    def empty(cls) -> "SampleSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z)

    @classmethod
    def of(cls, triples) -> "SampleSet":
        triples = list(triples)
        if not triples:
            return cls.empty()
        u, p, n = zip(*[(t[0], t[1], -1 if len(t) < 3 or t[2] is None else t[2]) for t in triples])
        return cls(np.array(u), np.array(p), np.array(n))

    def __len__(self):
        return int(self.users.size)

    def concat(self, other: "SampleSet") -> "SampleSet":
        return SampleSet(
            np.concatenate([self.users, other.users]),
            np.concatenate([self.pos, other.pos]),
            np.concatenate([self.neg, other.neg]),
        )

    def take(self, idx) -> "SampleSet":
        return SampleSet(self.users[idx], self.pos[idx], self.neg[idx])


@dataclass
class ModelHyper:
    embedding_dim: int = 32
    layers: int = 2
    learning_rate: float = 0.01
    l2_reg: float = 1e-4
    negatives_per_positive: int = 1
    batch_size: int = 1024
    init_std: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelHyper":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Checkpoint:
    """Serializable model state.

    ``tables`` holds named float64 arrays that are not trainable parameters
    (count tables, the initialization snapshot).
    """

    kind: str
    hyper: dict
    params: ParamVector
    tables: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    shape: dict = field(default_factory=dict)  # user_count / item_count

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.hyper == other.hyper
            and self.params == other.params
            and self.tables.keys() == other.tables.keys()
            and all(
                self.tables[k].shape == other.tables[k].shape and np.array_equal(self.tables[k], other.tables[k])
                for k in self.tables
            )
            and self.rng_state == other.rng_state
            and self.provenance == other.provenance
            and self.shape == other.shape
        )


def topk_from_scores(scores: np.ndarray, k: int, excluded: Optional[np.ndarray] = None) -> list[int]:
    """Indices of the ``k`` highest scores; ties go to the lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    eligible = np.ones(scores.size, dtype=bool)
    if excluded is not None and len(excluded):
        eligible[np.asarray(excluded, dtype=np.int64)] = False
    idx = np.flatnonzero(eligible)
    # lexsort: last key is primary; negate for descending score, index ascending
    order = np.lexsort((idx, -scores[idx]))
    return idx[order[:k]].tolist()


class RecModel:
    """Common ranking surface of every recommender here."""

    kind: str = ""
    user_count: int
    item_count: int

    @property
    def params(self) -> ParamVector:
        return ParamVector(np.zeros(0), [])

    def score_users(self, users) -> np.ndarray:
        raise NotImplementedError

    def predict_topk(self, user: int, k: int, exclude_seen: bool = True, dataset=None) -> list[int]:
        if not 0 <= user < self.user_count:
            raise IndexError(f"unknown user index {user}")
        scores = self.score_users([user])[0]
        excluded = dataset.seen_items(user) if (exclude_seen and dataset is not None) else None
        return topk_from_scores(scores, k, excluded)

    def topk_batch(self, users, k: int, dataset=None) -> list[list[int]]:
        """Top-k for many users at once, excluding each user's current train items."""
        users = list(users)
        if not users:
            return []
        scores = self.score_users(users)
        seen = dataset.seen_matrix() if dataset is not None else None
        out = []
        for row, u in enumerate(users):
            excluded = seen.indices[seen.indptr[u]:seen.indptr[u + 1]] if seen is not None else None
            out.append(topk_from_scores(scores[row], k, excluded))
        return out

    @property
    def has_gradients(self) -> bool:
        return False

    def to_checkpoint(self) -> Checkpoint:
        raise NotImplementedError
