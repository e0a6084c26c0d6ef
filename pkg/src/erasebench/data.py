"""Interaction logs, indexed datasets, forget batches and retain sampling.

The TSV format is UTF-8 with the header ``user_id<TAB>item_id<TAB>timestamp<TAB>category``.
Lines starting with ``#`` are comments. The category column may be empty.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core_math import ContractViolation

TSV_HEADER = ("user_id", "item_id", "timestamp", "category")


class ParseError(ValueError):
    pass


@dataclass
class InteractionLog:
    rows: list[tuple[str, str, int, Optional[str]]]

    def __len__(self):
        return len(self.rows)

    def canonical(self) -> "InteractionLog":
        """Rows sorted by (user, timestamp); ties keep file order."""
        return InteractionLog(sorted(self.rows, key=lambda r: (r[0], r[2])))


def load_interactions(path, format: str = "tsv") -> InteractionLog:
    if format != "tsv":
        raise ValueError(f"unsupported format {format!r}")
    path = Path(path)
    rows = []
    header_seen = False
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if not header_seen:
                if tuple(fields) != TSV_HEADER:
                    raise ParseError(f"line {lineno}: missing or malformed header, got {fields!r}")
                header_seen = True
                continue
            if len(fields) == 3:
                fields.append("")
            if len(fields) != 4:
                raise ParseError(f"line {lineno}: expected 4 columns, got {len(fields)}")
            user, item, ts, category = fields
            if not user or not item:
                raise ParseError(f"line {lineno}: empty user or item id")
            try:
                ts_val = int(ts)
            except ValueError:
                raise ParseError(f"line {lineno}: non-integer timestamp {ts!r}") from None
            rows.append((user, item, ts_val, category or None))
    if not header_seen:
        raise ParseError(f"{path}: missing header")
    if not rows:
        raise ParseError("empty interaction log")
    return InteractionLog(rows)


def write_interactions(path, rows: Iterable[tuple[str, str, int, Optional[str]]]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(TSV_HEADER) + "\n")
        for user, item, ts, category in rows:
            fh.write(f"{user}\t{item}\t{int(ts)}\t{category or ''}\n")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense-indexed interaction data.

    Train interactions carry stable surrogate ids (``train_ids``) assigned at
    build time; forget batches refer to these ids, so duplicate (user, item)
    pairs stay unambiguous. Arrays are kept sorted by id.
    """

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    train_ids: np.ndarray
    train_users: np.ndarray
    train_items: np.ndarray
    train_ts: np.ndarray
    test: dict[int, tuple[int, ...]]
    category_of_item: tuple[Optional[str], ...]
    sensitive_categories: frozenset[str] = frozenset()
    original_train_size: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def user_count(self) -> int:
        return len(self.user_ids)

    @property
    def item_count(self) -> int:
        return len(self.item_ids)

    @property
    def train_size(self) -> int:
        return int(self.train_ids.size)

    @property
    def sensitive_items(self) -> frozenset[int]:
        return frozenset(
            i for i, c in enumerate(self.category_of_item) if c is not None and c in self.sensitive_categories
        )

    def user_index(self, raw: str) -> int:
        if "user_lookup" not in self._cache:
            self._cache["user_lookup"] = {u: k for k, u in enumerate(self.user_ids)}
        return self._cache["user_lookup"][raw]

    def item_index(self, raw: str) -> int:
        if "item_lookup" not in self._cache:
            self._cache["item_lookup"] = {u: k for k, u in enumerate(self.item_ids)}
        return self._cache["item_lookup"][raw]

    def positions_of(self, ids) -> np.ndarray:
        """Array positions of the given interaction ids; raises if any is absent."""
        ids = np.asarray(sorted(ids), dtype=np.int64)
        pos = np.searchsorted(self.train_ids, ids)
        if self.train_ids.size:
            ok = (pos < self.train_ids.size) & (self.train_ids[np.minimum(pos, self.train_ids.size - 1)] == ids)
        else:
            ok = np.zeros(ids.size, dtype=bool)
        if not np.all(ok):
            missing = ids[~ok][:5].tolist()
            raise ContractViolation(f"interactions not in current train set: {missing}")
        return pos

    def _histories(self):
        if "hist" not in self._cache:
            order = np.lexsort((self.train_ids, self.train_users))
            counts = np.bincount(self.train_users, minlength=self.user_count)
            indptr = np.concatenate([[0], np.cumsum(counts)])
            self._cache["hist"] = (order, indptr)
        return self._cache["hist"]

    def history_positions(self, user: int) -> np.ndarray:
        order, indptr = self._histories()
        return order[indptr[user]:indptr[user + 1]]

    def user_history_size(self) -> np.ndarray:
        return np.bincount(self.train_users, minlength=self.user_count)

    def seen_items(self, user: int) -> np.ndarray:
        return np.unique(self.train_items[self.history_positions(user)])

    def interaction_keys(self) -> np.ndarray:
        """Sorted unique ``user * item_count + item`` keys of the train set."""
        if "keys" not in self._cache:
            self._cache["keys"] = np.unique(
                self.train_users.astype(np.int64) * self.item_count + self.train_items
            )
        return self._cache["keys"]

    def seen_matrix(self):
        """Binary user-item CSR matrix of current train interactions."""
        if "seen" not in self._cache:
            import scipy.sparse as sp

            keys = self.interaction_keys()
            u = keys // self.item_count
            i = keys % self.item_count
            self._cache["seen"] = sp.csr_matrix(
                (np.ones(keys.size), (u, i)), shape=(self.user_count, self.item_count)
            )
        return self._cache["seen"]

    def test_users(self) -> list[int]:
        return sorted(u for u, items in self.test.items() if items)

    def with_train_mask(self, keep: np.ndarray) -> "Dataset":
        return replace(
            self,
            train_ids=self.train_ids[keep],
            train_users=self.train_users[keep],
            train_items=self.train_items[keep],
            train_ts=self.train_ts[keep],
            _cache={},
        )

    def with_test(self, test: dict[int, tuple[int, ...]]) -> "Dataset":
        return replace(self, test=dict(test), _cache={})

    def records(self, positions=None):
        """Raw TSV rows for train positions (all by default)."""
        if positions is None:
            positions = np.arange(self.train_size)
        return [
            (
                self.user_ids[self.train_users[p]],
                self.item_ids[self.train_items[p]],
                int(self.train_ts[p]),
                self.category_of_item[self.train_items[p]],
            )
            for p in positions
        ]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.user_count}:{self.item_count}".encode())
        for arr in (self.train_ids, self.train_users, self.train_items, self.train_ts):
            h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
        for u in sorted(self.test):
            h.update(f"{u}:{self.test[u]}".encode())
        return h.hexdigest()


def build_dataset(
    log: InteractionLog,
    split: str = "leave_last_out",
    min_interactions: int = 2,
    sensitive_categories: Iterable[str] = (),
    test_fraction: float = 0.2,
) -> Dataset:
    """Filter, reindex and split an interaction log.

    ``split`` is ``"leave_last_out"`` (each user's final interaction is held
    out) or ``"temporal_fraction"`` (the last ``ceil(test_fraction * n_u)``
    interactions are held out). Users are dense-indexed in sorted raw-id
    order, items likewise. Held-out items that the user also has in train are
    dropped from that user's test list.
    """
    if split not in ("leave_last_out", "temporal_fraction"):
        raise ValueError(f"unknown split {split!r}")
    if split == "leave_last_out" and min_interactions < 2:
        raise ValueError("leave_last_out needs min_interactions >= 2")
    if split == "temporal_fraction" and not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")

    rows = log.canonical().rows
    by_user: dict[str, list] = {}
    for row in rows:
        by_user.setdefault(row[0], []).append(row)
    kept = {u: r for u, r in by_user.items() if len(r) >= min_interactions}
    if not kept:
        raise ValueError("no user survives the min_interactions filter")

    user_ids = tuple(sorted(kept))
    item_ids = tuple(sorted({r[1] for rs in kept.values() for r in rs}))
    item_lookup = {it: k for k, it in enumerate(item_ids)}
    category: list[Optional[str]] = [None] * len(item_ids)
    for rs in kept.values():
        for _, it, _, cat in rs:
            k = item_lookup[it]
            if category[k] is None and cat:
                category[k] = cat

    tr_u, tr_i, tr_t = [], [], []
    test: dict[int, tuple[int, ...]] = {}
    for uidx, u in enumerate(user_ids):
        rs = kept[u]
        n_test = 1 if split == "leave_last_out" else math.ceil(test_fraction * len(rs))
        n_test = min(n_test, len(rs) - 1)
        train_rows, test_rows = rs[: len(rs) - n_test], rs[len(rs) - n_test:]
        seen = set()
        for _, it, ts, _ in train_rows:
            tr_u.append(uidx)
            tr_i.append(item_lookup[it])
            tr_t.append(ts)
            seen.add(item_lookup[it])
        held = []
        for _, it, _, _ in test_rows:
            k = item_lookup[it]
            if k not in seen and k not in held:
                held.append(k)
        test[uidx] = tuple(held)

    n = len(tr_u)
    return Dataset(
        user_ids=user_ids,
        item_ids=item_ids,
        train_ids=np.arange(n, dtype=np.int64),
        train_users=np.asarray(tr_u, dtype=np.int64),
        train_items=np.asarray(tr_i, dtype=np.int64),
        train_ts=np.asarray(tr_t, dtype=np.int64),
        test=test,
        category_of_item=tuple(category),
        sensitive_categories=frozenset(sensitive_categories),
        original_train_size=n,
    )


@dataclass(frozen=True)
class ForgetBatch:
    """A set of train interactions to unlearn, with their resolved owners and items."""

    interactions: frozenset[int]
    owners: frozenset[int]
    users: tuple[int, ...] = ()
    items: tuple[int, ...] = ()

    @classmethod
    def from_ids(cls, dataset: Dataset, ids: Iterable[int]) -> "ForgetBatch":
        ids = sorted(set(int(i) for i in ids))
        if not ids:
            return cls(frozenset(), frozenset())
        pos = dataset.positions_of(ids)
        users = dataset.train_users[pos]
        items = dataset.train_items[pos]
        return cls(
            frozenset(ids),
            frozenset(int(u) for u in users),
            tuple(int(u) for u in users),
            tuple(int(i) for i in items),
        )

    @classmethod
    def empty(cls) -> "ForgetBatch":
        return cls(frozenset(), frozenset())

    def __len__(self):
        return len(self.interactions)

    @property
    def sorted_ids(self) -> np.ndarray:
        return np.asarray(sorted(self.interactions), dtype=np.int64)


def apply_forget(dataset: Dataset, batch: ForgetBatch) -> Dataset:
    """Return a new dataset whose train set excludes ``batch``. The input is not modified."""
    if not batch.interactions:
        return dataset
    pos = dataset.positions_of(batch.interactions)
    keep = np.ones(dataset.train_size, dtype=bool)
    keep[pos] = False
    return dataset.with_train_mask(keep)


@dataclass
class RetainSample:
    positions: np.ndarray  # positions into the dataset's train arrays
    interactions: np.ndarray  # surrogate ids
    users: tuple[int, ...]
    cap_used: int

    def __len__(self):
        return int(self.interactions.size)


def sample_retain(
    dataset: Dataset,
    unlearned_users: Iterable[int],
    cap: float = math.inf,
    frac_cap: float = 0.05,
    rng: np.random.Generator | None = None,
) -> RetainSample:
    """Sample complete user histories, skipping unlearned users.

    Users are visited in a uniformly shuffled order and each contributes all
    of its remaining train interactions. Sampling stops at the first user
    whose history would push the total above ``min(cap, floor(frac_cap * |original train|))``.
    """
    if not 0 < frac_cap <= 1:
        raise ValueError("frac_cap must be in (0, 1]")
    rng = rng if rng is not None else np.random.default_rng(0)
    limit = min(cap, math.floor(frac_cap * max(dataset.original_train_size, dataset.train_size)))
    excluded = set(int(u) for u in unlearned_users)
    sizes = dataset.user_history_size()
    candidates = np.array(
        [u for u in range(dataset.user_count) if u not in excluded and sizes[u] > 0], dtype=np.int64
    )
    order = rng.permutation(candidates)
    chosen, total = [], 0
    for u in order:
        if total + sizes[u] > limit:
            break
        chosen.append(int(u))
        total += int(sizes[u])
    if chosen:
        pos = np.sort(np.concatenate([dataset.history_positions(u) for u in chosen]))
    else:
        pos = np.zeros(0, dtype=np.int64)
    cap_used = int(limit) if math.isfinite(limit) else -1
    return RetainSample(pos, dataset.train_ids[pos], tuple(chosen), cap_used)
