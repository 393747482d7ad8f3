"""Synthetic datasets with planted low-rank structure and cluster tags.

The generator matches the model family: raw ratings are
r_max * sigmoid(planted inner product) plus Gaussian noise. Users come in
clusters; tags are drawn mostly from a per-cluster pool so that the
tag layer carries neighborhood signal. With `supercluster_tags` two
adjacent clusters share one tag pool, leaving the rating layer to
disambiguate within a pool (both diffusion layers then carry
complementary information).
"""

import numpy as np

from wudiff import Dataset, RatingTable, TagTable


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    t = np.exp(x[~pos])
    out[~pos] = t / (1.0 + t)
    return out


def planted_ratings(n_users=20, n_items=20, rank=2, density=1.0, noise=0.0,
                    r_max=5.0, seed=0, user_factors=None):
    """RatingTable with ratings r_max*sigmoid(U V^T / sqrt(rank)) + noise."""
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(n_users, rank)) if user_factors is None else user_factors
    V = rng.normal(size=(n_items, rank))
    raw = r_max * _sigmoid((U @ V.T) / np.sqrt(rank))
    if noise:
        raw = raw + noise * rng.normal(size=raw.shape)
    raw = np.clip(raw, 0.02 * r_max, r_max)
    if density >= 1.0:
        mask = np.ones((n_users, n_items), dtype=bool)
    else:
        mask = rng.random((n_users, n_items)) < density
        # every user and item keeps at least one rating
        for u in range(n_users):
            if not mask[u].any():
                mask[u, rng.integers(n_items)] = True
        for i in range(n_items):
            if not mask[:, i].any():
                mask[rng.integers(n_users), i] = True
    users, items = np.nonzero(mask)
    return RatingTable(users, items, raw[mask], n_users, n_items, r_max)


def clustered_dataset(n_users=200, n_items=200, rank=4, density=0.05,
                      noise=0.1, n_clusters=4, r_max=5.0, seed=0,
                      tags_per_user=8, tags_per_pool=15, tag_fidelity=0.85,
                      pool_overlap=0.0, cluster_spread=0.35):
    """Dataset with planted rank structure and cluster-driven tags.

    Each cluster owns a window of `tags_per_pool` tags; `pool_overlap` is
    the fraction of that window shared with the next cluster, so tags
    alone cannot fully separate clusters and the rating layer carries
    complementary signal.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_clusters, rank))
    cluster = np.arange(n_users) % n_clusters
    U = centers[cluster] + cluster_spread * rng.normal(size=(n_users, rank))
    ratings = planted_ratings(n_users, n_items, rank, density, noise, r_max,
                              seed=seed + 1, user_factors=U)

    stride = max(1, int(round(tags_per_pool * (1.0 - pool_overlap))))
    n_tags = stride * (n_clusters - 1) + tags_per_pool
    counts = {}
    for u in range(n_users):
        start = cluster[u] * stride
        own = np.arange(start, start + tags_per_pool)
        for _ in range(tags_per_user):
            if rng.random() < tag_fidelity:
                t = int(rng.choice(own))
            else:
                t = int(rng.integers(n_tags))
            counts[(u, t)] = counts.get((u, t), 0) + 1
    tu, tt = zip(*sorted(counts))
    tags = TagTable(list(tu), list(tt), [counts[k] for k in sorted(counts)],
                    n_users, n_tags)
    return Dataset(ratings=ratings, tags=tags)
