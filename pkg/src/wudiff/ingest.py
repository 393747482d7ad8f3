"""Dataset file parsing, canonical dumps, and cross-validation folds.

Input files are UTF-8 TSV. The ratings file yields one `user item rating`
triple per row; the tags file is either `user item tag` rows (occurrences
of (user, tag) are aggregated across items) or pre-aggregated
`user tag count` rows. Users may appear in either file; both tables share
one dense user universe.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Dataset, RatingTable, TagTable
from .errors import InputError, ParseError
from .seeding import FOLD_NS, VALIDATION_NS, spawn_rng

log = logging.getLogger(__name__)

RATING_MODES = ("explicit", "implicit")
TAG_LAYOUTS = ("triples", "counts")


@dataclass
class LoadOptions:
    """Column layout and parsing switches for `load_tsv`.

    rating_mode "implicit" maps any interaction to rating 1.0 with
    r_max = 1.0 (the rating column, if any, is ignored). In "explicit"
    mode r_max defaults to the maximum observed rating.
    """

    skip_header: bool = False
    rating_mode: str = "explicit"
    rating_cols: tuple[int, int, int] = (0, 1, 2)  # user, item, rating
    tags_layout: str = "triples"
    tag_cols: tuple[int, int, int] = (0, 1, 2)  # triples: user, item, tag; counts: user, tag, count
    r_max: float | None = None
    delimiter: str = "\t"

    def __post_init__(self):
        if self.rating_mode not in RATING_MODES:
            raise InputError(f"rating_mode must be one of {RATING_MODES}")
        if self.tags_layout not in TAG_LAYOUTS:
            raise InputError(f"tags_layout must be one of {TAG_LAYOUTS}")
        if self.r_max is not None and self.r_max <= 0:
            raise InputError("r_max must be positive")


class _LabelMap:
    """Dense ids assigned by first appearance."""

    def __init__(self):
        self.ids: dict[str, int] = {}
        self.labels: list[str] = []

    def get(self, label: str) -> int:
        idx = self.ids.get(label)
        if idx is None:
            idx = len(self.labels)
            self.ids[label] = idx
            self.labels.append(label)
        return idx


def _read_rows(path, delimiter, skip_header, min_cols):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if skip_header and line_no == 1:
                continue
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split(delimiter)
            if len(cols) < min_cols:
                raise ParseError(path, line_no,
                                 f"expected at least {min_cols} columns, got {len(cols)}")
            yield line_no, cols


def load_tsv(ratings_path, tags_path=None, options: LoadOptions | None = None) -> Dataset:
    """Parse a ratings file and an optional tags file into a Dataset.

    Duplicate (user, item) rows keep the last occurrence (a warning is
    logged). Ratings must be positive and, when an explicit r_max is
    given, no larger than it.
    """
    opts = options or LoadOptions()
    users = _LabelMap()
    items = _LabelMap()
    tags = _LabelMap()

    uc, ic, rc = opts.rating_cols
    implicit = opts.rating_mode == "implicit"
    min_cols = max(uc, ic) + 1 if implicit else max(uc, ic, rc) + 1
    rating_of: dict[tuple[int, int], float] = {}
    dup_ratings = 0
    for line_no, cols in _read_rows(ratings_path, opts.delimiter, opts.skip_header, min_cols):
        u = users.get(cols[uc].strip())
        i = items.get(cols[ic].strip())
        if implicit:
            r = 1.0
        else:
            try:
                r = float(cols[rc])
            except ValueError:
                raise ParseError(ratings_path, line_no,
                                 f"rating {cols[rc]!r} is not a number") from None
            if r <= 0 or (opts.r_max is not None and r > opts.r_max):
                ceiling = opts.r_max if opts.r_max is not None else "inf"
                raise ParseError(ratings_path, line_no,
                                 f"rating {r} outside (0, {ceiling}]")
        if (u, i) in rating_of:
            dup_ratings += 1
        rating_of[(u, i)] = r
    if dup_ratings:
        log.warning("%s: %d duplicate (user,item) rows; kept last occurrence",
                    ratings_path, dup_ratings)

    tag_count_of: dict[tuple[int, int], int] = {}
    if tags_path is not None:
        tu, tm, tt = opts.tag_cols
        if opts.tags_layout == "triples":
            min_cols = max(tu, tm, tt) + 1
            for line_no, cols in _read_rows(tags_path, opts.delimiter, opts.skip_header, min_cols):
                u = users.get(cols[tu].strip())
                t = tags.get(cols[tt].strip())
                tag_count_of[(u, t)] = tag_count_of.get((u, t), 0) + 1
        else:  # counts: user, tag, count
            dup_tags = 0
            min_cols = max(tu, tm, tt) + 1
            for line_no, cols in _read_rows(tags_path, opts.delimiter, opts.skip_header, min_cols):
                u = users.get(cols[tu].strip())
                t = tags.get(cols[tm].strip())
                try:
                    c = int(cols[tt])
                except ValueError:
                    raise ParseError(tags_path, line_no,
                                     f"count {cols[tt]!r} is not an integer") from None
                if c <= 0:
                    raise ParseError(tags_path, line_no, f"count {c} must be positive")
                if (u, t) in tag_count_of:
                    dup_tags += 1
                tag_count_of[(u, t)] = c
            if dup_tags:
                log.warning("%s: %d duplicate (user,tag) rows; kept last occurrence",
                            tags_path, dup_tags)

    user_count = len(users.labels)
    if implicit:
        r_max = 1.0
    elif opts.r_max is not None:
        r_max = opts.r_max
    else:
        r_max = max(rating_of.values()) if rating_of else 1.0

    r_users = np.fromiter((k[0] for k in rating_of), dtype=np.int64, count=len(rating_of))
    r_items = np.fromiter((k[1] for k in rating_of), dtype=np.int64, count=len(rating_of))
    r_vals = np.fromiter(rating_of.values(), dtype=np.float64, count=len(rating_of))
    ratings = RatingTable(r_users, r_items, r_vals, user_count, len(items.labels), r_max)

    t_users = np.fromiter((k[0] for k in tag_count_of), dtype=np.int64, count=len(tag_count_of))
    t_tags = np.fromiter((k[1] for k in tag_count_of), dtype=np.int64, count=len(tag_count_of))
    t_counts = np.fromiter(tag_count_of.values(), dtype=np.int64, count=len(tag_count_of))
    tag_table = TagTable(t_users, t_tags, t_counts, user_count, len(tags.labels))

    return Dataset(ratings=ratings, tags=tag_table, user_labels=users.labels,
                   item_labels=items.labels, tag_labels=tags.labels)


def dump_dataset(d: Dataset, ratings_path, tags_path) -> None:
    """Canonical dump: dense ids, sorted rows, 17-significant-digit ratings.

    Re-ingesting the dump (tags_layout="counts") reproduces the tables
    exactly: rating-file users always precede tag-only users in the dense
    id order, so first-appearance assignment is the identity.
    """
    rt = d.ratings
    with open(ratings_path, "w", encoding="utf-8") as fh:
        for u, i, r in zip(rt.users, rt.items, rt.values):
            fh.write(f"{u}\t{i}\t{r:.17g}\n")
    tt = d.tags
    with open(tags_path, "w", encoding="utf-8") as fh:
        for u, t, c in zip(tt.users, tt.tags, tt.counts):
            fh.write(f"{u}\t{t}\t{c}\n")


@dataclass(frozen=True)
class FoldPlan:
    """Balanced random partition of rating entries into folds.

    `assignments[k]` is the fold of the k-th entry in the table's
    canonical order; fold sizes differ by at most one.
    """

    seed: int
    n_folds: int
    assignments: np.ndarray
    validation_fraction: float = 0.1

    def __post_init__(self):
        self.assignments.setflags(write=False)


def make_folds(d: Dataset, n_folds: int = 10, seed: int = 0,
               validation_fraction: float = 0.1) -> FoldPlan:
    """Uniformly random balanced fold assignment, deterministic given seed."""
    n = d.ratings.n_ratings
    if n_folds < 2:
        raise InputError(f"n_folds must be >= 2, got {n_folds}")
    if n < n_folds:
        raise InputError(f"dataset has {n} ratings, fewer than {n_folds} folds")
    if not 0 <= validation_fraction < 1:
        raise InputError("validation_fraction must be in [0, 1)")
    rng = spawn_rng(seed, FOLD_NS)
    perm = rng.permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n, dtype=np.int64) % n_folds
    return FoldPlan(seed=int(seed), n_folds=int(n_folds), assignments=assignments,
                    validation_fraction=float(validation_fraction))


def split(d: Dataset, plan: FoldPlan, test_fold: int
          ) -> tuple[RatingTable, RatingTable, RatingTable]:
    """(train, validation, test) rating tables for one fold.

    Test takes the entries of `test_fold`; validation takes a seeded
    `validation_fraction` share of the rest; train takes the remainder.
    Tag data is side information and is never split.
    """
    if not 0 <= test_fold < plan.n_folds:
        raise InputError(f"test_fold {test_fold} out of range [0, {plan.n_folds})")
    idx = np.arange(d.ratings.n_ratings)
    test_idx = idx[plan.assignments == test_fold]
    rest_idx = idx[plan.assignments != test_fold]
    n_val = int(plan.validation_fraction * rest_idx.size)
    if n_val:
        rng = spawn_rng(plan.seed, VALIDATION_NS, test_fold)
        picked = rng.permutation(rest_idx.size)[:n_val]
        val_mask = np.zeros(rest_idx.size, dtype=bool)
        val_mask[picked] = True
        val_idx = rest_idx[val_mask]
        train_idx = rest_idx[~val_mask]
    else:
        val_idx = rest_idx[:0]
        train_idx = rest_idx
    rt = d.ratings
    return rt.subset(train_idx), rt.subset(val_idx), rt.subset(test_idx)


def holdout_validation(d: Dataset, fraction: float, seed: int
                       ) -> tuple[RatingTable, RatingTable]:
    """Seeded (train, validation) carve-out of the full rating set."""
    if not 0 <= fraction < 1:
        raise InputError("validation fraction must be in [0, 1)")
    n = d.ratings.n_ratings
    idx = np.arange(n)
    n_val = int(fraction * n)
    if n_val:
        rng = spawn_rng(seed, VALIDATION_NS)
        picked = rng.permutation(n)[:n_val]
        mask = np.zeros(n, dtype=bool)
        mask[picked] = True
        return d.ratings.subset(idx[~mask]), d.ratings.subset(idx[mask])
    return d.ratings.subset(idx), d.ratings.subset(idx[:0])
