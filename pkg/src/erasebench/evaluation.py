"""Ranking utility, sensitive-exposure and efficiency metrics, and the unlearned-vs-retrained report.

nDCG uses binary gains, a ``log2(rank + 1)`` discount and an ideal DCG over
``min(k, |relevant|)`` positions. Utility is averaged over users with a
non-empty test list; rankings always exclude the user's current train items.
``ERASEBENCH_THREADS`` bounds the number of worker threads used to score users.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core_math import ContractViolation
from .data import Dataset

DEPLOY_SPEEDUP = 1e3
DEPLOY_REL_EFF = -0.01


class UndefinedMetric(ArithmeticError):
    pass


def ranking_metrics(ranked, relevant, k: int) -> tuple[float, float, float]:
    """``(ndcg, recall, hit)`` of the top ``k`` of ``ranked``; all zero when ``relevant`` is empty."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(int(r) for r in relevant)
    if not relevant:
        return 0.0, 0.0, 0.0
    top = [int(r) for r in list(ranked)[:k]]
    if len(set(top)) != len(top):
        raise ContractViolation("ranked list has duplicates")
    gains = [1.0 if r in relevant else 0.0 for r in top]
    dcg = sum(g / math.log2(pos + 2) for pos, g in enumerate(gains))
    idcg = sum(1.0 / math.log2(pos + 2) for pos in range(min(k, len(relevant))))
    hits = sum(gains)
    return dcg / idcg, hits / len(relevant), 1.0 if hits > 0 else 0.0


def eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("ERASEBENCH_THREADS", "1")))
    except ValueError:
        return 1


def topk_lists(model, users, k: int, dataset: Dataset, chunk: int = 512) -> list[list[int]]:
    """Top-k for each user (train items excluded), scored in chunks, optionally threaded."""
    users = list(users)
    chunks = [users[s:s + chunk] for s in range(0, len(users), chunk)]
    dataset.seen_matrix()  # build the cache before threads share it
    threads = eval_threads()
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda c: model.topk_batch(c, k, dataset), chunks))
    else:
        parts = [model.topk_batch(c, k, dataset) for c in chunks]
    return [r for p in parts for r in p]


def utility(model, dataset: Dataset, ks=(10, 20), test: Optional[dict] = None) -> dict[int, dict[str, float]]:
    """Mean nDCG/Recall/Hit per k over users with non-empty test lists."""
    test = dataset.test if test is None else test
    users = sorted(u for u, items in test.items() if items)
    ks = sorted(set(int(k) for k in ks))
    out = {k: {"ndcg": 0.0, "recall": 0.0, "hit": 0.0} for k in ks}
    if not users:
        return out
    lists = topk_lists(model, users, max(ks), dataset)
    for k in ks:
        per_user = np.array([ranking_metrics(r, test[u], k) for u, r in zip(users, lists)])
        for j, name in enumerate(("ndcg", "recall", "hit")):
            out[k][name] = math.fsum(per_user[:, j]) / len(users)
    return out


def sensitive_at_k(model, users, sensitive_items, k: int, dataset: Dataset) -> float:
    """Fraction of ``users`` with at least one sensitive item in their top-k."""
    users = sorted(set(int(u) for u in users))
    if not users:
        raise ContractViolation("Sensitive@k needs at least one user")
    items = set(int(i) for i in sensitive_items)
    if not items:
        return 0.0
    lists = topk_lists(model, users, k, dataset)
    return sum(1 for r in lists if items.intersection(r)) / len(users)


def rel_items(retrained, unlearned, users, sensitive_items, k: int, dataset: Dataset) -> float:
    return sensitive_at_k(retrained, users, sensitive_items, k, dataset) - sensitive_at_k(
        unlearned, users, sensitive_items, k, dataset
    )


def rel_eff_from(ndcg_unlearned: float, ndcg_retrained: float) -> float:
    if not ndcg_retrained > 0:
        raise UndefinedMetric("RelEff is undefined when the retrained nDCG is zero")
    return ndcg_unlearned / ndcg_retrained - 1.0


def rel_eff(retrained, unlearned, k: int, dataset: Dataset, test: Optional[dict] = None) -> float:
    nu = utility(unlearned, dataset, (k,), test)[k]["ndcg"]
    nr = utility(retrained, dataset, (k,), test)[k]["ndcg"]
    return rel_eff_from(nu, nr)


def speedup(retrain_seconds: float, unlearn_total_seconds: float) -> float:
    if retrain_seconds <= 0 or unlearn_total_seconds <= 0:
        raise ValueError("speedup needs positive times")
    return retrain_seconds / unlearn_total_seconds


def deployable(speedup_value: float, rel_eff_value: float) -> bool:
    """At least a thousandfold faster than retraining and within 1% of its nDCG."""
    return speedup_value >= DEPLOY_SPEEDUP and rel_eff_value >= DEPLOY_REL_EFF


@dataclass
class MetricsReport:
    status: str  # "ok" | "div." | "n/a"
    ks: list[int]
    utility: dict[int, dict[str, float]] = field(default_factory=dict)
    retrained_utility: dict[int, dict[str, float]] = field(default_factory=dict)
    sensitive_at_k: dict[int, float] = field(default_factory=dict)
    sensitive_retrained: dict[int, float] = field(default_factory=dict)
    rel_items_at_k: dict[int, float] = field(default_factory=dict)
    rel_eff_at_k: dict[int, Optional[float]] = field(default_factory=dict)
    timing: dict[str, Optional[float]] = field(default_factory=dict)
    deployable: Optional[bool] = None
    extra: dict = field(default_factory=dict)

    def to_flat(self) -> dict:
        """Flat ``{"metric@k": value}`` mapping."""
        flat: dict = {"status": self.status, "ks": list(self.ks), "deployable": self.deployable}
        for k in self.ks:
            for name in ("ndcg", "recall", "hit"):
                if k in self.utility:
                    flat[f"{name}@{k}"] = self.utility[k][name]
                if k in self.retrained_utility:
                    flat[f"retrained_{name}@{k}"] = self.retrained_utility[k][name]
            for prefix, table in (
                ("sensitive", self.sensitive_at_k),
                ("retrained_sensitive", self.sensitive_retrained),
                ("rel_items", self.rel_items_at_k),
                ("rel_eff", self.rel_eff_at_k),
            ):
                if k in table:
                    flat[f"{prefix}@{k}"] = table[k]
        for key, value in self.timing.items():
            flat[key] = value
        for key, value in self.extra.items():
            flat[key] = value
        return flat

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_flat(cls, flat: dict) -> "MetricsReport":
        ks = [int(k) for k in flat["ks"]]
        rep = cls(flat["status"], ks, deployable=flat.get("deployable"))
        known = {"status", "ks", "deployable"}
        for key, value in flat.items():
            if key in known:
                continue
            if "@" in key:
                name, k = key.rsplit("@", 1)
                k = int(k)
                if name in ("ndcg", "recall", "hit"):
                    rep.utility.setdefault(k, {})[name] = value
                elif name.startswith("retrained_") and name[10:] in ("ndcg", "recall", "hit"):
                    rep.retrained_utility.setdefault(k, {})[name[10:]] = value
                elif name == "sensitive":
                    rep.sensitive_at_k[k] = value
                elif name == "retrained_sensitive":
                    rep.sensitive_retrained[k] = value
                elif name == "rel_items":
                    rep.rel_items_at_k[k] = value
                elif name == "rel_eff":
                    rep.rel_eff_at_k[k] = value
                else:
                    rep.extra[key] = value
            elif key in ("unlearn_total_s", "unlearn_avg_per_request_s", "retrain_s", "speedup"):
                rep.timing[key] = value
            else:
                rep.extra[key] = value
        return rep


STATUS_LABELS = {"ok": "ok", "diverged": "div.", "not_applicable": "n/a"}


def build_report(original, retrained, trajectory, scenario, dataset: Dataset, ks=(10, 20),
                 retrain_seconds: Optional[float] = None) -> MetricsReport:
    """Compare the trajectory's final model with the retrained reference.

    ``dataset`` is the retain-set view both models are evaluated against
    (train items excluded from rankings). Under the sensitive scenario the
    scrubbed test lists are used and Sensitive@k / RelItems@k are filled in.
    A diverged or inapplicable trajectory keeps its status and carries no
    unlearned-side numbers.
    """
    ks = sorted(set(int(k) for k in ks))
    final = original if trajectory is None or len(trajectory) == 0 else trajectory.model
    for m in (final, retrained):
        if m.user_count != dataset.user_count or m.item_count != dataset.item_count:
            raise ContractViolation("model and dataset vocabularies differ")
    status = STATUS_LABELS[trajectory.status] if trajectory is not None else "ok"
    sensitive = scenario is not None and hasattr(scenario, "affected_users")
    test = scenario.scrubbed_test if sensitive else dataset.test

    rep = MetricsReport(status, ks)
    rep.retrained_utility = utility(retrained, dataset, ks, test)
    if sensitive:
        for k in ks:
            rep.sensitive_retrained[k] = sensitive_at_k(retrained, scenario.affected_users,
                                                        scenario.sensitive_items, k, dataset)

    total = trajectory.total_wall_clock if trajectory is not None else 0.0
    n = len(trajectory) if trajectory is not None else 0
    rep.timing = {
        "unlearn_total_s": total,
        "unlearn_avg_per_request_s": total / n if n else 0.0,
        "retrain_s": retrain_seconds,
        "speedup": speedup(retrain_seconds, total) if retrain_seconds and total > 0 else None,
    }
    if status != "ok":
        return rep

    rep.utility = utility(final, dataset, ks, test)
    for k in ks:
        nr = rep.retrained_utility[k]["ndcg"]
        rep.rel_eff_at_k[k] = rel_eff_from(rep.utility[k]["ndcg"], nr) if nr > 0 else None
        if sensitive:
            rep.sensitive_at_k[k] = sensitive_at_k(final, scenario.affected_users, scenario.sensitive_items, k, dataset)
            rep.rel_items_at_k[k] = rep.sensitive_retrained[k] - rep.sensitive_at_k[k]
    k_ref = 20 if 20 in ks else ks[-1]
    if rep.timing["speedup"] is not None and rep.rel_eff_at_k.get(k_ref) is not None:
        rep.deployable = deployable(rep.timing["speedup"], rep.rel_eff_at_k[k_ref])
    return rep


def aggregate(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value); ``None`` entries are skipped."""
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return float("nan"), float("nan")
    mean = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var)
