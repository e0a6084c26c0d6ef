"""Unlearning request generators: sensitive-item deletion and spam-user removal.

Both produce an ``UnlearnRequestSequence`` of disjoint ``ForgetBatch`` values
that ``run_sequence`` consumes in order. The spam attack is applied to the
collaborative-filtering setting: fabricated users whose histories alternate
low-popularity target items with popular items.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core_math import ContractViolation, stream
from .data import Dataset, ForgetBatch, load_interactions, write_interactions

SCENARIOS = ("sensitive", "spam")


@dataclass
class UnlearnRequestSequence:
    batches: list[ForgetBatch]
    scenario: str

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        seen: set[int] = set()
        for b in self.batches:
            if seen & b.interactions:
                raise ContractViolation("request batches overlap")
            seen |= b.interactions

    def __len__(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)

    @property
    def total_interactions(self) -> int:
        return sum(len(b) for b in self.batches)

    def union(self) -> ForgetBatch:
        ids = frozenset().union(*[b.interactions for b in self.batches]) if self.batches else frozenset()
        owners = frozenset().union(*[b.owners for b in self.batches]) if self.batches else frozenset()
        users = tuple(u for b in self.batches for u in b.users)
        items = tuple(i for b in self.batches for i in b.items)
        return ForgetBatch(ids, owners, users, items)


@dataclass
class SensitiveScenario:
    sensitive_categories: frozenset[str]
    sensitive_items: frozenset[int]
    affected_users: tuple[int, ...]
    requests: UnlearnRequestSequence
    scrubbed_test: dict[int, tuple[int, ...]]


@dataclass
class SpamScenario:
    poisoned_dataset: Dataset
    clean_dataset: Dataset
    spam_users: tuple[int, ...]
    target_items: tuple[int, ...]
    popular_items: tuple[int, ...]
    injected_ids: frozenset[int]
    requests: Optional[UnlearnRequestSequence] = None
    spam_fraction: float = 0.01


def _rng(rng, seed, *keys):
    return rng if rng is not None else stream(seed, *keys)


def gen_sensitive_requests(
    dataset: Dataset,
    sensitive_categories: Optional[Iterable[str]] = None,
    budget_fraction: float = 1e-4,
    rng: np.random.Generator | None = None,
    seed: int = 0,
) -> SensitiveScenario:
    """Pick users with sensitive interactions until the forget budget is reached.

    Users owning at least one sensitive train interaction are shuffled; each
    is appended until the running count of their sensitive interactions
    first reaches ``budget_fraction * |train|``. Each chosen user becomes one
    batch holding exactly their sensitive train interactions. Sensitive items
    are removed from the chosen users' test lists.
    """
    cats = frozenset(dataset.sensitive_categories if sensitive_categories is None else sensitive_categories)
    items = frozenset(i for i, c in enumerate(dataset.category_of_item) if c is not None and c in cats)
    is_sens = np.zeros(dataset.item_count, dtype=bool)
    is_sens[sorted(items)] = True
    mask = is_sens[dataset.train_items] if dataset.train_size else np.zeros(0, dtype=bool)
    if not mask.any():
        raise ValueError("no sensitive interactions in the train set")

    owners = np.unique(dataset.train_users[mask])
    order = _rng(rng, seed, "sensitive-users").permutation(owners)
    budget = budget_fraction * dataset.train_size
    batches, chosen, total = [], [], 0
    for u in order:
        if total >= budget and chosen:
            break
        pos = dataset.history_positions(int(u))
        ids = dataset.train_ids[pos[mask[pos]]]
        batches.append(ForgetBatch.from_ids(dataset, ids.tolist()))
        chosen.append(int(u))
        total += ids.size

    scrubbed = dict(dataset.test)
    for u in chosen:
        if u in scrubbed:
            scrubbed[u] = tuple(i for i in scrubbed[u] if i not in items)
    return SensitiveScenario(cats, items, tuple(chosen), UnlearnRequestSequence(batches, "sensitive"), scrubbed)


def item_popularity(dataset: Dataset) -> np.ndarray:
    return np.bincount(dataset.train_items, minlength=dataset.item_count)


def inject_users(dataset: Dataset, histories: list[list[int]], prefix: str = "spam", t0: int | None = None) -> Dataset:
    """Append fabricated users with the given item histories; they get no test items."""
    n_new = len(histories)
    width = max(5, len(str(n_new)))
    new_ids = tuple(f"{prefix}{k:0{width}d}" for k in range(n_new))
    if set(new_ids) & set(dataset.user_ids):
        raise ContractViolation("fabricated user ids collide with existing users")
    base_u = dataset.user_count
    next_id = int(dataset.train_ids.max()) + 1 if dataset.train_size else 0
    t = int(dataset.train_ts.max()) + 1 if t0 is None and dataset.train_size else int(t0 or 0)
    users, items, ts = [], [], []
    for k, hist in enumerate(histories):
        for it in hist:
            users.append(base_u + k)
            items.append(int(it))
            ts.append(t)
            t += 1
    n = len(users)
    return replace(
        dataset,
        user_ids=dataset.user_ids + new_ids,
        train_ids=np.concatenate([dataset.train_ids, np.arange(next_id, next_id + n, dtype=np.int64)]),
        train_users=np.concatenate([dataset.train_users, np.asarray(users, dtype=np.int64)]),
        train_items=np.concatenate([dataset.train_items, np.asarray(items, dtype=np.int64)]),
        train_ts=np.concatenate([dataset.train_ts, np.asarray(ts, dtype=np.int64)]),
        original_train_size=dataset.train_size + n,
        _cache={},
    )


def gen_spam_attack(
    dataset: Dataset,
    spam_fraction: float = 0.01,
    n_target_items: int = 5,
    popular_pool_size: int = 50,
    session_length: int | None = None,
    rng: np.random.Generator | None = None,
    seed: int = 0,
) -> SpamScenario:
    """Inject ``ceil(spam_fraction * |train|)`` interactions from fabricated users.

    Targets are drawn from the bottom popularity quartile. Every spam history
    walks through all targets in shuffled order, alternating each with an
    item from the ``popular_pool_size`` most popular items, and then fills
    its remaining slots with further popular items. ``session_length``
    defaults to the mean clean history length.
    """
    if spam_fraction <= 0:
        raise ValueError("spam_fraction must be > 0")
    if not 1 <= popular_pool_size <= dataset.item_count:
        raise ValueError("popular_pool_size must be in [1, item_count]")
    rng = _rng(rng, seed, "spam-attack")
    pop = item_popularity(dataset)
    by_pop = np.lexsort((np.arange(dataset.item_count), -pop))  # most popular first
    popular = by_pop[:popular_pool_size]
    tail = by_pop[-max(1, dataset.item_count // 4):]
    tail = np.setdiff1d(tail, popular)
    if tail.size == 0:
        raise ValueError("no low-popularity items available as targets")
    targets = np.sort(rng.choice(tail, size=min(n_target_items, tail.size), replace=False))

    total = math.ceil(spam_fraction * dataset.train_size)
    if session_length is None:
        sizes = dataset.user_history_size()
        session_length = int(round(float(sizes[sizes > 0].mean())))
    session_length = max(2, int(session_length))
    n_users = max(1, total // session_length)
    lengths = [len(a) for a in np.array_split(np.arange(total), n_users)]

    histories = []
    for length in lengths:
        order = rng.permutation(targets)
        fill = rng.choice(popular, size=length, replace=length > popular.size)
        hist, t_k, p_k = [], 0, 0
        for slot in range(length):
            if slot % 2 == 0 and t_k < order.size:
                hist.append(int(order[t_k]))
                t_k += 1
            else:
                hist.append(int(fill[p_k]))
                p_k += 1
        histories.append(hist)

    poisoned = inject_users(dataset, histories)
    spam_users = tuple(range(dataset.user_count, poisoned.user_count))
    injected = frozenset(poisoned.train_ids[dataset.train_size:].tolist())
    return SpamScenario(
        poisoned, dataset, spam_users, tuple(int(t) for t in targets), tuple(int(p) for p in popular),
        injected, None, spam_fraction,
    )


def batch_spam_requests(scenario: SpamScenario, batch_size: int = 256, rng: np.random.Generator | None = None,
                        seed: int = 0) -> UnlearnRequestSequence:
    """Partition spam users (seeded shuffle) into batches holding all of their interactions."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    ds = scenario.poisoned_dataset
    order = _rng(rng, seed, "spam-batches").permutation(np.asarray(scenario.spam_users, dtype=np.int64))
    batches = []
    for start in range(0, order.size, batch_size):
        ids = np.concatenate([ds.train_ids[ds.history_positions(int(u))] for u in order[start:start + batch_size]])
        batches.append(ForgetBatch.from_ids(ds, ids.tolist()))
    seq = UnlearnRequestSequence(batches, "spam")
    scenario.requests = seq
    return seq


def mean_target_rank(model, dataset: Dataset, users, targets) -> float:
    """Average 1-based rank of the target items in each user's full ranking (train items excluded).

    A target the user already has in train is skipped for that user.
    """
    users = np.asarray(list(users), dtype=np.int64)
    targets = np.asarray(list(targets), dtype=np.int64)
    seen = dataset.seen_matrix()
    ranks = []
    for start in range(0, users.size, 512):
        chunk = users[start:start + 512]
        scores = model.score_users(chunk)
        for row, u in enumerate(chunk):
            s = scores[row].copy()
            own = seen.indices[seen.indptr[u]:seen.indptr[u + 1]]
            s[own] = -np.inf
            for t in targets:
                if np.isinf(s[t]):
                    continue
                # ties resolve to the lower index, as in top-k
                better = np.sum(s > s[t]) + np.sum((s == s[t]) & (np.arange(s.size) < t))
                ranks.append(better + 1)
    return float(np.mean(ranks)) if ranks else float("nan")


# -- artifacts ----------------------------------------------------------------

def write_request_artifacts(requests: UnlearnRequestSequence, dataset: Dataset, out_dir) -> Path:
    """One ``batch_<i>.tsv`` per batch plus ``manifest.json`` with batch order and interaction ids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, b in enumerate(requests.batches):
        name = f"batch_{k}.tsv"
        ids = b.sorted_ids
        pos = dataset.positions_of(ids) if ids.size else np.zeros(0, dtype=np.int64)
        write_interactions(out / name, dataset.records(pos))
        entries.append({"file": name, "interaction_ids": ids.tolist(), "size": int(ids.size)})
    manifest = {"scenario": requests.scenario, "dataset_digest": dataset.digest(), "batches": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_request_artifacts(out_dir, dataset: Dataset) -> UnlearnRequestSequence:
    """Rebuild a request sequence; TSV rows are cross-checked against the listed ids."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    batches = []
    for entry in manifest["batches"]:
        ids = entry["interaction_ids"]
        batch = ForgetBatch.from_ids(dataset, ids)
        rows = sorted(load_interactions(out / entry["file"]).rows) if ids else []
        expected = sorted(dataset.records(dataset.positions_of(ids))) if ids else []
        if [r[:3] for r in rows] != [r[:3] for r in expected]:
            raise ContractViolation(f"{entry['file']} does not match its listed interaction ids")
        batches.append(batch)
    return UnlearnRequestSequence(batches, manifest["scenario"])
