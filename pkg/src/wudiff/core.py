"""Sparse rating/tag containers and the dataset aggregate.

Users, items and tags are dense 0-based integer ids. External string
labels live in label maps on `Dataset`; everything below the ingest
boundary works on dense ids only. All containers are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


def _csr_from_sorted(rows: np.ndarray, n_rows: int) -> np.ndarray:
    """Row pointer array for entries already sorted by row id."""
    counts = np.bincount(rows, minlength=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


class RatingTable:
    """Sparse user x item ratings, addressable by user row and item column.

    Entries are kept in canonical order (sorted by user id, then item id);
    fold assignments and dumps index into that order. `r_max` is the
    rating-scale ceiling: every stored rating r satisfies 0 < r <= r_max.
    """

    def __init__(self, users, items, values, user_count, item_count, r_max):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (users.shape == items.shape == values.shape):
            raise InputError("users/items/values arrays must have equal length")
        if r_max <= 0:
            raise InputError(f"r_max must be positive, got {r_max}")
        if users.size:
            if users.min() < 0 or users.max() >= user_count:
                raise InputError("user id out of range")
            if items.min() < 0 or items.max() >= item_count:
                raise InputError("item id out of range")
            if values.min() <= 0 or values.max() > r_max:
                bad = values[(values <= 0) | (values > r_max)][0]
                raise InputError(f"rating {bad} outside (0, {r_max}]")
        order = np.lexsort((items, users))
        users, items, values = users[order], items[order], values[order]
        if users.size > 1:
            same = (users[1:] == users[:-1]) & (items[1:] == items[:-1])
            if same.any():
                k = int(np.flatnonzero(same)[0])
                raise InputError(
                    f"duplicate rating entry for user {users[k]}, item {items[k]}"
                )
        self.users = users
        self.items = items
        self.values = values
        self.user_count = int(user_count)
        self.item_count = int(item_count)
        self.r_max = float(r_max)
        self.indptr = _csr_from_sorted(users, self.user_count)
        # inverted index: entry positions grouped by item
        by_item = np.argsort(items, kind="stable")
        self.item_indptr = _csr_from_sorted(items[by_item], self.item_count)
        self.item_entry_idx = by_item
        _freeze(self.users, self.items, self.values, self.indptr,
                self.item_indptr, self.item_entry_idx)

    @property
    def n_ratings(self) -> int:
        return self.values.size

    def items_of(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        """(item ids, ratings) for user u, items ascending."""
        self._check_user(u)
        lo, hi = self.indptr[u], self.indptr[u + 1]
        return self.items[lo:hi], self.values[lo:hi]

    def users_of(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(user ids, ratings) for item i, users ascending."""
        self._check_item(i)
        lo, hi = self.item_indptr[i], self.item_indptr[i + 1]
        idx = self.item_entry_idx[lo:hi]
        return self.users[idx], self.values[idx]

    def subset(self, entry_idx: np.ndarray) -> "RatingTable":
        """New table holding the entries at the given canonical positions."""
        return RatingTable(self.users[entry_idx], self.items[entry_idx],
                           self.values[entry_idx], self.user_count,
                           self.item_count, self.r_max)

    def _check_user(self, u: int) -> None:
        if not 0 <= u < self.user_count:
            raise InputError(f"user id {u} out of range [0, {self.user_count})")

    def _check_item(self, i: int) -> None:
        if not 0 <= i < self.item_count:
            raise InputError(f"item id {i} out of range [0, {self.item_count})")


class TagTable:
    """Sparse user x tag assignment counts.

    Counts are strictly positive (a zero count is simply absent). Aggregates
    needed by BM25 scoring (per-user totals, per-tag user counts, number of
    tagging users, mean profile size) are cached at construction.
    """

    def __init__(self, users, tags, counts, user_count, tag_count):
        users = np.asarray(users, dtype=np.int64)
        tags = np.asarray(tags, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if not (users.shape == tags.shape == counts.shape):
            raise InputError("users/tags/counts arrays must have equal length")
        if users.size:
            if users.min() < 0 or users.max() >= user_count:
                raise InputError("user id out of range")
            if tags.min() < 0 or tags.max() >= tag_count:
                raise InputError("tag id out of range")
            if counts.min() <= 0:
                raise InputError("tag assignment counts must be positive")
        order = np.lexsort((tags, users))
        users, tags, counts = users[order], tags[order], counts[order]
        if users.size > 1:
            same = (users[1:] == users[:-1]) & (tags[1:] == tags[:-1])
            if same.any():
                k = int(np.flatnonzero(same)[0])
                raise InputError(
                    f"duplicate tag entry for user {users[k]}, tag {tags[k]}"
                )
        self.users = users
        self.tags = tags
        self.counts = counts
        self.user_count = int(user_count)
        self.tag_count = int(tag_count)
        self.indptr = _csr_from_sorted(users, self.user_count)
        by_tag = np.argsort(tags, kind="stable")
        self.tag_indptr = _csr_from_sorted(tags[by_tag], self.tag_count)
        self.tag_entry_idx = by_tag
        # BM25 aggregates: profile size |u|, tag user-counts n_u(t),
        # number of tagging users M, mean profile size over tagging users
        self.user_totals = np.zeros(self.user_count, dtype=np.int64)
        np.add.at(self.user_totals, users, counts)
        self.tag_user_counts = np.diff(self.tag_indptr)
        self.tagging_user_count = int(np.count_nonzero(self.user_totals))
        if self.tagging_user_count:
            self.mean_profile_size = (
                float(self.user_totals.sum()) / self.tagging_user_count
            )
        else:
            self.mean_profile_size = 0.0
        _freeze(self.users, self.tags, self.counts, self.indptr,
                self.tag_indptr, self.tag_entry_idx, self.user_totals,
                self.tag_user_counts)

    @property
    def n_entries(self) -> int:
        return self.counts.size

    def tags_of(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        """(tag ids, counts) for user u, tags ascending."""
        self._check_user(u)
        lo, hi = self.indptr[u], self.indptr[u + 1]
        return self.tags[lo:hi], self.counts[lo:hi]

    def users_of(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """(user ids, counts) for tag t, users ascending."""
        self._check_tag(t)
        lo, hi = self.tag_indptr[t], self.tag_indptr[t + 1]
        idx = self.tag_entry_idx[lo:hi]
        return self.users[idx], self.counts[idx]

    def count_of(self, u: int, t: int) -> int:
        """tf(u, t), or 0 when absent."""
        tags, counts = self.tags_of(u)
        self._check_tag(t)
        pos = np.searchsorted(tags, t)
        if pos < tags.size and tags[pos] == t:
            return int(counts[pos])
        return 0

    def _check_user(self, u: int) -> None:
        if not 0 <= u < self.user_count:
            raise InputError(f"user id {u} out of range [0, {self.user_count})")

    def _check_tag(self, t: int) -> None:
        if not 0 <= t < self.tag_count:
            raise InputError(f"tag id {t} out of range [0, {self.tag_count})")


def empty_tag_table(user_count: int) -> TagTable:
    return TagTable([], [], [], user_count, 0)


@dataclass(frozen=True)
class Dataset:
    """Ratings and tags over a shared user universe, plus label maps.

    Label maps translate external string ids to dense ids; `*_labels[k]`
    is the external label of dense id k.
    """

    ratings: RatingTable
    tags: TagTable
    user_labels: list[str] = field(default_factory=list)
    item_labels: list[str] = field(default_factory=list)
    tag_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.ratings.user_count != self.tags.user_count:
            raise InputError(
                "ratings and tags must share the user universe "
                f"({self.ratings.user_count} != {self.tags.user_count})"
            )

    @property
    def user_count(self) -> int:
        return self.ratings.user_count

    @property
    def item_count(self) -> int:
        return self.ratings.item_count

    @property
    def tag_count(self) -> int:
        return self.tags.tag_count


def degree_user_items(d: Dataset, u: int) -> int:
    """Number of distinct items rated by user u."""
    items, _ = d.ratings.items_of(u)
    return items.size


def degree_item(d: Dataset, i: int) -> int:
    """Number of distinct users who rated item i."""
    users, _ = d.ratings.users_of(i)
    return users.size


def degree_user_tags(d: Dataset, u: int) -> int:
    """Number of distinct tags used by user u."""
    tags, _ = d.tags.tags_of(u)
    return tags.size


def degree_tag(d: Dataset, t: int) -> int:
    """Number of distinct users who used tag t."""
    users, _ = d.tags.users_of(t)
    return users.size
