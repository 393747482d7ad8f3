"""Per-edge weights for the tripartite graph.

User-item edges carry the z-score of the rating within the user's own
rating distribution; user-tag edges carry an Okapi BM25 score of the
(user, tag) pair. Statistics are always computed on the train split only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RatingTable, TagTable
from .errors import InputError

# below this spread a user's ratings are treated as constant and the
# z-score weight falls back to 1.0 (keeps binary datasets on the
# unweighted diffusion instead of zeroing the whole rating layer)
DEGENERATE_STD = 1e-9


@dataclass(frozen=True)
class UserRatingStats:
    """Per-user mean and population standard deviation of train ratings."""

    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        for a in (self.mean, self.std, self.count):
            a.setflags(write=False)


def compute_user_stats(train: RatingTable) -> UserRatingStats:
    n = train.user_count
    count = np.diff(train.indptr).astype(np.int64)
    sums = np.zeros(n)
    np.add.at(sums, train.users, train.values)
    safe = np.maximum(count, 1)
    mean = sums / safe
    sq = np.zeros(n)
    np.add.at(sq, train.users, (train.values - mean[train.users]) ** 2)
    std = np.sqrt(sq / safe)
    mean[count == 0] = 0.0
    std[count == 0] = 0.0
    return UserRatingStats(mean=mean, std=std, count=count)


def zscore(stats: UserRatingStats, u: int, r: float) -> float:
    """(r - mean_u) / std_u, or 1.0 when the user's spread is degenerate."""
    if not 0 <= u < stats.count.size:
        raise InputError(f"user id {u} out of range")
    if stats.count[u] == 0:
        raise InputError(f"user {u} has no train ratings")
    std = stats.std[u]
    if std < DEGENERATE_STD:
        return 1.0
    return (float(r) - float(stats.mean[u])) / float(std)


def zscore_weights(train: RatingTable, stats: UserRatingStats) -> np.ndarray:
    """Edge weights for every train rating, in the table's canonical order."""
    std = stats.std[train.users]
    mean = stats.mean[train.users]
    degenerate = std < DEGENERATE_STD
    w = np.where(degenerate, 1.0, (train.values - mean) / np.where(degenerate, 1.0, std))
    return w


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 2.0
    b: float = 0.75

    def __post_init__(self):
        if self.k1 <= 0:
            raise InputError(f"k1 must be positive, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise InputError(f"b must be in [0, 1], got {self.b}")


def bm25(tags: TagTable, params: Bm25Params, u: int, t: int) -> float:
    """Okapi BM25 score of tag t for user u.

    IDF uses the number of tagging users over the tag's user count
    (natural log); the length normalizer uses the user's total number of
    tag assignments against the mean over tagging users.
    """
    tf = tags.count_of(u, t)
    if tf == 0:
        raise InputError(f"user {u} never used tag {t}")
    m = tags.tagging_user_count
    n_t = int(tags.tag_user_counts[t])
    idf = math.log(m / n_t)
    profile = float(tags.user_totals[u])
    norm = params.k1 * (1.0 - params.b + params.b * profile / tags.mean_profile_size)
    return idf * (tf * (params.k1 + 1.0)) / (tf + norm)


def bm25_weights(tags: TagTable, params: Bm25Params) -> np.ndarray:
    """BM25 of every (user, tag) entry, in the table's canonical order."""
    if tags.n_entries == 0:
        return np.zeros(0)
    m = tags.tagging_user_count
    idf = np.log(m / tags.tag_user_counts[tags.tags].astype(np.float64))
    tf = tags.counts.astype(np.float64)
    profile = tags.user_totals[tags.users].astype(np.float64)
    norm = params.k1 * (1.0 - params.b + params.b * profile / tags.mean_profile_size)
    return idf * (tf * (params.k1 + 1.0)) / (tf + norm)
