"""Synthetic implicit-feedback logs with clustered preferences and one sensitive category."""

from __future__ import annotations

import numpy as np

from .data import InteractionLog


def make_synthetic_log(
    n_users: int = 2000,
    n_items: int = 500,
    mean_interactions: int = 20,
    n_clusters: int = 10,
    sensitive_category: str = "alcohol",
    concentration: float = 0.3,
    seed: int = 0,
) -> InteractionLog:
    """Users sample items from a mixture over item clusters.

    Cluster 0 carries ``sensitive_category``; the others are named
    ``cat01``, ``cat02``, ... Item popularity inside a cluster follows a
    Zipf-like profile, and each user's cluster mixture is drawn from a
    symmetric Dirichlet with the given concentration. History lengths are
    ``5 + Poisson(mean_interactions - 5)`` without repeated items.
    """
    rng = np.random.default_rng(seed)
    cluster = rng.integers(0, n_clusters, size=n_items)
    cluster[:n_clusters] = np.arange(n_clusters)
    names = [sensitive_category] + [f"cat{c:02d}" for c in range(1, n_clusters)]
    pop = 1.0 / (1.0 + rng.permutation(n_items)) ** 0.6

    rows = []
    for u in range(n_users):
        mix = rng.dirichlet(np.full(n_clusters, concentration))
        weights = mix[cluster] * pop
        weights /= weights.sum()
        n = min(5 + rng.poisson(max(mean_interactions - 5, 0)), n_items)
        items = rng.choice(n_items, size=n, replace=False, p=weights)
        t = int(rng.integers(1_000_000, 2_000_000))
        for it in items:
            t += int(rng.integers(1, 3600))
            rows.append((f"u{u:05d}", f"i{int(it):04d}", t, names[cluster[it]]))
    return InteractionLog(rows)
