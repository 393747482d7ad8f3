"""Weighted tripartite graph and diffusion-based user similarities.

The graph holds the user-item and user-tag bipartite layers with
per-edge weights (rating z-scores, tag BM25 scores) plus inverted
indexes and cached degrees. Similarities follow the two-step
resource-allocation scheme: each user spreads unit resource over their
items (tags), which spread it back over their users; the weighted
variant multiplies the two endpoint edge weights into each path. The
result is asymmetric: sim(u, v) is normalized by v's degree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import RatingTable, TagTable
from .errors import InputError
from .weighting import Bm25Params, UserRatingStats, bm25_weights, zscore_weights


class WeightedTripartiteGraph:
    """CSR edge lists per user plus inverted indexes per item/tag."""

    def __init__(self, ui_indptr, ui_items, ui_weights, item_count,
                 ut_indptr, ut_tags, ut_weights, tag_count):
        self.user_count = ui_indptr.size - 1
        self.item_count = item_count
        self.tag_count = tag_count
        self.ui_indptr = ui_indptr
        self.ui_items = ui_items
        self.ui_weights = ui_weights
        self.ut_indptr = ut_indptr
        self.ut_tags = ut_tags
        self.ut_weights = ut_weights

        def invert(indptr, cols, weights, n_cols):
            rows = np.repeat(np.arange(self.user_count, dtype=np.int64),
                             np.diff(indptr))
            order = np.argsort(cols, kind="stable")
            inv_indptr = np.zeros(n_cols + 1, dtype=np.int64)
            np.cumsum(np.bincount(cols, minlength=n_cols), out=inv_indptr[1:])
            return inv_indptr, rows[order], weights[order]

        self.iu_indptr, self.iu_users, self.iu_weights = invert(
            ui_indptr, ui_items, ui_weights, item_count)
        self.tu_indptr, self.tu_users, self.tu_weights = invert(
            ut_indptr, ut_tags, ut_weights, tag_count)

        self.k_user_items = np.diff(self.ui_indptr)
        self.k_item = np.diff(self.iu_indptr)
        self.k_user_tags = np.diff(self.ut_indptr)
        self.k_tag = np.diff(self.tu_indptr)
        for a in (self.ui_indptr, self.ui_items, self.ui_weights,
                  self.ut_indptr, self.ut_tags, self.ut_weights,
                  self.iu_indptr, self.iu_users, self.iu_weights,
                  self.tu_indptr, self.tu_users, self.tu_weights,
                  self.k_user_items, self.k_item, self.k_user_tags, self.k_tag):
            a.setflags(write=False)

    def items_of(self, u):
        lo, hi = self.ui_indptr[u], self.ui_indptr[u + 1]
        return self.ui_items[lo:hi], self.ui_weights[lo:hi]

    def tags_of(self, u):
        lo, hi = self.ut_indptr[u], self.ut_indptr[u + 1]
        return self.ut_tags[lo:hi], self.ut_weights[lo:hi]


def build_graph(train: RatingTable, tags: TagTable, stats: UserRatingStats,
                bm25_params: Bm25Params | None = None) -> WeightedTripartiteGraph:
    """Materialize all edge weights from the train ratings and the tag table."""
    params = bm25_params or Bm25Params()
    if train.user_count != tags.user_count:
        raise InputError("train ratings and tags must share the user universe")
    return WeightedTripartiteGraph(
        ui_indptr=train.indptr.copy(), ui_items=train.items.copy(),
        ui_weights=zscore_weights(train, stats), item_count=train.item_count,
        ut_indptr=tags.indptr.copy(), ut_tags=tags.tags.copy(),
        ut_weights=bm25_weights(tags, params), tag_count=tags.tag_count)


def _layer_similarity(items_u, w_u, items_v, w_v, k_col, k_v, weighted):
    """Shared-neighbor sum of w_u*w_v/k(col), normalized by k_v."""
    if k_v == 0:
        return 0.0
    common, iu, iv = np.intersect1d(items_u, items_v, return_indices=True)
    total = 0.0
    for c, a, b in zip(common, iu, iv):
        if weighted:
            total += (w_u[a] * w_v[b]) / k_col[c]
        else:
            total += 1.0 / k_col[c]
    return total / k_v


def udiff_rating(g: WeightedTripartiteGraph, u: int, v: int) -> float:
    """Unweighted resource-allocation similarity on the user-item layer."""
    items_u, w_u = g.items_of(u)
    items_v, w_v = g.items_of(v)
    return _layer_similarity(items_u, w_u, items_v, w_v, g.k_item,
                             g.k_user_items[v], weighted=False)


def udiff_tag(g: WeightedTripartiteGraph, u: int, v: int) -> float:
    """Unweighted resource-allocation similarity on the user-tag layer."""
    tags_u, w_u = g.tags_of(u)
    tags_v, w_v = g.tags_of(v)
    return _layer_similarity(tags_u, w_u, tags_v, w_v, g.k_tag,
                             g.k_user_tags[v], weighted=False)


def wudiff_rating(g: WeightedTripartiteGraph, u: int, v: int) -> float:
    """Weighted variant: each shared item contributes h(r_u)h(r_v)/k(item)."""
    items_u, w_u = g.items_of(u)
    items_v, w_v = g.items_of(v)
    return _layer_similarity(items_u, w_u, items_v, w_v, g.k_item,
                             g.k_user_items[v], weighted=True)


def wudiff_tag(g: WeightedTripartiteGraph, u: int, v: int) -> float:
    """Weighted variant: each shared tag contributes w(u,t)w(v,t)/k(tag)."""
    tags_u, w_u = g.tags_of(u)
    tags_v, w_v = g.tags_of(v)
    return _layer_similarity(tags_u, w_u, tags_v, w_v, g.k_tag,
                             g.k_user_tags[v], weighted=True)


def combined_similarity(g: WeightedTripartiteGraph, u: int, v: int,
                        lambda_mix: float) -> float:
    """Convex mix of the weighted rating-layer and tag-layer similarities."""
    if not 0.0 <= lambda_mix <= 1.0:
        raise InputError(f"lambda must be in [0, 1], got {lambda_mix}")
    return (lambda_mix * wudiff_rating(g, u, v)
            + (1.0 - lambda_mix) * wudiff_tag(g, u, v))


@dataclass(frozen=True)
class NeighborSets:
    """Per-user top-k similar users with their similarity weights.

    `ids[u]` is sorted by similarity descending, ties by id ascending,
    never contains u, and may be shorter than k (or empty) when the user
    shares no items or tags with anyone.
    """

    ids: list[np.ndarray]
    sims: list[np.ndarray]

    def __post_init__(self):
        for u, (vid, s) in enumerate(zip(self.ids, self.sims)):
            if vid.size != s.size:
                raise InputError("neighbor ids and sims must align")
            if vid.size and (vid == u).any():
                raise InputError(f"user {u} appears in its own neighbor set")
            if s.size and not np.isfinite(s).all():
                raise InputError("neighbor similarities must be finite")

    @property
    def user_count(self) -> int:
        return len(self.ids)

    def to_csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lens = np.fromiter((a.size for a in self.ids), dtype=np.int64,
                           count=len(self.ids))
        indptr = np.zeros(len(self.ids) + 1, dtype=np.int64)
        np.cumsum(lens, out=indptr[1:])
        ids = np.concatenate(self.ids) if indptr[-1] else np.zeros(0, np.int64)
        sims = np.concatenate(self.sims) if indptr[-1] else np.zeros(0)
        return indptr, ids.astype(np.int64), sims.astype(np.float64)


@njit(cache=True)
def _candidate_sims(u, lambda_mix,
                    ui_indptr, ui_items, ui_weights, iu_indptr, iu_users, iu_weights,
                    k_user_items,
                    ut_indptr, ut_tags, ut_weights, tu_indptr, tu_users, tu_weights,
                    k_user_tags,
                    num_r, num_t, touched, touch_list):
    """Combined similarity of u to every user sharing an item or a tag.

    num_r/num_t/touched/touch_list are reusable scratch arrays sized to the
    user count; they are restored to zero before returning.
    """
    n_touch = 0
    for e in range(ui_indptr[u], ui_indptr[u + 1]):
        i = ui_items[e]
        hu = ui_weights[e]
        lo, hi = iu_indptr[i], iu_indptr[i + 1]
        ki = hi - lo
        for e2 in range(lo, hi):
            v = iu_users[e2]
            if not touched[v]:
                touched[v] = True
                touch_list[n_touch] = v
                n_touch += 1
            num_r[v] += (hu * iu_weights[e2]) / ki
    for e in range(ut_indptr[u], ut_indptr[u + 1]):
        t = ut_tags[e]
        wu = ut_weights[e]
        lo, hi = tu_indptr[t], tu_indptr[t + 1]
        kt = hi - lo
        for e2 in range(lo, hi):
            v = tu_users[e2]
            if not touched[v]:
                touched[v] = True
                touch_list[n_touch] = v
                n_touch += 1
            num_t[v] += (wu * tu_weights[e2]) / kt
    cand = np.sort(touch_list[:n_touch])
    sims = np.empty(n_touch, np.float64)
    for j in range(n_touch):
        v = cand[j]
        s = 0.0
        if k_user_items[v] > 0:
            s += lambda_mix * (num_r[v] / k_user_items[v])
        if k_user_tags[v] > 0:
            s += (1.0 - lambda_mix) * (num_t[v] / k_user_tags[v])
        sims[j] = s
        num_r[v] = 0.0
        num_t[v] = 0.0
        touched[v] = False
    return cand, sims


def top_k_neighbors(g: WeightedTripartiteGraph, lambda_mix: float,
                    k_neighbors: int, clamp_nonneg: bool = False) -> NeighborSets:
    """Top-k most similar users per user under the combined similarity.

    Candidates are exactly the users sharing at least one item or tag
    (everyone else has similarity 0). Ties break by ascending id.
    """
    if not 0.0 <= lambda_mix <= 1.0:
        raise InputError(f"lambda must be in [0, 1], got {lambda_mix}")
    if k_neighbors < 1:
        raise InputError(f"k_neighbors must be >= 1, got {k_neighbors}")
    n = g.user_count
    num_r = np.zeros(n)
    num_t = np.zeros(n)
    touched = np.zeros(n, dtype=np.bool_)
    touch_list = np.zeros(n, dtype=np.int64)
    ids_out: list[np.ndarray] = []
    sims_out: list[np.ndarray] = []
    for u in range(n):
        cand, sims = _candidate_sims(
            u, float(lambda_mix),
            g.ui_indptr, g.ui_items, g.ui_weights,
            g.iu_indptr, g.iu_users, g.iu_weights, g.k_user_items,
            g.ut_indptr, g.ut_tags, g.ut_weights,
            g.tu_indptr, g.tu_users, g.tu_weights, g.k_user_tags,
            num_r, num_t, touched, touch_list)
        keep = cand != u
        cand, sims = cand[keep], sims[keep]
        if clamp_nonneg:
            sims = np.maximum(sims, 0.0)
        order = np.lexsort((cand, -sims))[:k_neighbors]
        ids_out.append(cand[order])
        sims_out.append(sims[order])
    return NeighborSets(ids=ids_out, sims=sims_out)


def dump_neighbors(ns: NeighborSets, path) -> None:
    """TSV dump `u v sim` with 12 significant digits, sorted by (u, rank)."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, (vid, s) in enumerate(zip(ns.ids, ns.sims)):
            for v, sim in zip(vid, s):
                fh.write(f"{u}\t{v}\t{sim:.12g}\n")
