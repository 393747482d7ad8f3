"""Latent-factor models and the stochastic gradient descent trainer.

Two trainers share one code path: the plain regularized factorization
baseline, and the variant whose loss adds a similar-user term pulling
each user's latent vector toward the vectors of their diffusion
neighbors, weighted by similarity. Predictions map the factor inner
product through a logistic onto the rating scale.

Ratings are scaled by 1/r_max before training; `objective` and
`sgd_epoch` operate on scaled tables (r_max == 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .core import RatingTable
from .diffusion import NeighborSets
from .errors import ConfigError, DivergenceError, InputError
from .seeding import INIT_NS, SHUFFLE_NS, spawn_rng


def scale_rating(r: float, r_max: float) -> float:
    if not 0 < r <= r_max:
        raise InputError(f"rating {r} outside (0, {r_max}]")
    return r / r_max


def unscale(x: float, r_max: float) -> float:
    return x * r_max


def scale_table(table: RatingTable) -> RatingTable:
    """Copy of the table with ratings divided by r_max (new r_max is 1)."""
    return RatingTable(table.users, table.items, table.values / table.r_max,
                       table.user_count, table.item_count, 1.0)


def logistic(x: float) -> float:
    """Sigmoid, stable for |x| up to several hundred."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    t = math.exp(x)
    return t / (1.0 + t)


def logistic_deriv(x: float) -> float:
    """exp(-x) / (1 + exp(-x))^2, evaluated on the stable side."""
    t = math.exp(-abs(x))
    return t / ((1.0 + t) * (1.0 + t))


def _logistic_vec(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    t = np.exp(x[~pos])
    out[~pos] = t / (1.0 + t)
    return out


@dataclass
class TrainConfig:
    """Hyperparameters for both trainers.

    `alpha` scales the similar-user term; `single_sided_reg` halves the
    neighbor pull (the update rule otherwise applies it twice, once per
    symmetric appearance). `patience` counts consecutive epochs without
    validation improvement before stopping.
    """

    factors: int = 20
    alpha: float = 0.01
    lambda_u: float = 0.01
    lambda_i: float = 0.01
    gamma1: float = 0.01
    gamma2: float = 0.01
    max_epochs: int = 200
    patience: int = 1
    seed: int = 0
    shuffle: bool = False
    single_sided_reg: bool = False

    def __post_init__(self):
        problems = []
        if self.factors < 1:
            problems.append(f"factors must be >= 1, got {self.factors}")
        if self.alpha < 0:
            problems.append(f"alpha must be >= 0, got {self.alpha}")
        if self.lambda_u < 0 or self.lambda_i < 0:
            problems.append("lambda_u and lambda_i must be >= 0")
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            problems.append("gamma1 and gamma2 must be > 0")
        if self.max_epochs < 0:
            problems.append(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.patience < 1:
            problems.append(f"patience must be >= 1, got {self.patience}")
        if problems:
            raise ConfigError(problems)

    @property
    def neighbor_coefficient(self) -> float:
        return self.alpha * (1.0 if self.single_sided_reg else 2.0)


@dataclass
class FactorModel:
    """User and item latent matrices plus prediction fallbacks.

    `seen_users`/`seen_items` mark ids with at least one train rating;
    anything else predicts the global train mean.
    """

    P: np.ndarray
    Q: np.ndarray
    factors: int
    r_max: float
    global_mean: float
    seen_users: np.ndarray
    seen_items: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.P).all() and np.isfinite(self.Q).all()):
            raise DivergenceError("model contains non-finite factors")

    @property
    def user_count(self) -> int:
        return self.P.shape[0]

    @property
    def item_count(self) -> int:
        return self.Q.shape[0]

    def copy(self) -> "FactorModel":
        return replace(self, P=self.P.copy(), Q=self.Q.copy(),
                       seen_users=self.seen_users.copy(),
                       seen_items=self.seen_items.copy())


def init_model(train: RatingTable, cfg: TrainConfig) -> FactorModel:
    """Seeded uniform initialization in [0, 1/sqrt(f)].

    Keeps initial inner products small enough that the logistic stays in
    its responsive range.
    """
    if train.n_ratings == 0:
        raise InputError("cannot initialize a model from an empty train set")
    rng = spawn_rng(cfg.seed, INIT_NS)
    bound = 1.0 / math.sqrt(cfg.factors)
    P = rng.uniform(0.0, bound, size=(train.user_count, cfg.factors))
    Q = rng.uniform(0.0, bound, size=(train.item_count, cfg.factors))
    seen_users = np.zeros(train.user_count, dtype=bool)
    seen_users[train.users] = True
    seen_items = np.zeros(train.item_count, dtype=bool)
    seen_items[train.items] = True
    return FactorModel(P=P, Q=Q, factors=cfg.factors, r_max=train.r_max,
                       global_mean=float(train.values.mean()),
                       seen_users=seen_users, seen_items=seen_items)


def predict(m: FactorModel, u: int, i: int) -> float:
    """r_max * g(p_u . q_i); unknown user or item falls back to the mean."""
    if not (0 <= u < m.user_count and 0 <= i < m.item_count):
        return m.global_mean
    if not (m.seen_users[u] and m.seen_items[i]):
        return m.global_mean
    return m.r_max * logistic(float(m.P[u] @ m.Q[i]))


def predict_many(m: FactorModel, users: np.ndarray, items: np.ndarray) -> np.ndarray:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    ok = ((users >= 0) & (users < m.user_count)
          & (items >= 0) & (items < m.item_count))
    ok[ok] &= m.seen_users[users[ok]] & m.seen_items[items[ok]]
    out = np.full(users.shape, m.global_mean)
    x = np.einsum("ij,ij->i", m.P[users[ok]], m.Q[items[ok]])
    out[ok] = m.r_max * _logistic_vec(x)
    return out


def _neighbor_csr(neighbors: NeighborSets | None, user_count: int):
    if neighbors is None:
        return (np.zeros(user_count + 1, dtype=np.int64),
                np.zeros(0, dtype=np.int64), np.zeros(0))
    if neighbors.user_count != user_count:
        raise InputError("neighbor sets do not match the user universe")
    return neighbors.to_csr()


def objective(m: FactorModel, train: RatingTable,
              neighbors: NeighborSets | None, cfg: TrainConfig) -> float:
    """Exact loss: squared error + neighbor penalty + Frobenius penalties."""
    if train.r_max != 1.0:
        raise InputError("objective expects ratings scaled to (0, 1]")
    x = np.einsum("ij,ij->i", m.P[train.users], m.Q[train.items])
    g = _logistic_vec(x)
    loss = float(np.sum((train.values - g) ** 2))
    if cfg.alpha != 0.0 and neighbors is not None:
        indptr, ids, sims = _neighbor_csr(neighbors, m.user_count)
        penalty = 0.0
        for u in range(m.user_count):
            lo, hi = indptr[u], indptr[u + 1]
            if lo == hi:
                continue
            diff = m.P[u] - m.P[ids[lo:hi]]
            penalty += float(sims[lo:hi] @ np.sum(diff * diff, axis=1))
        loss += 0.5 * cfg.alpha * penalty
    loss += 0.5 * cfg.lambda_u * float(np.sum(m.P * m.P))
    loss += 0.5 * cfg.lambda_i * float(np.sum(m.Q * m.Q))
    if not math.isfinite(loss):
        raise DivergenceError("objective is non-finite")
    return loss


@njit(cache=True)
def _sgd_pass(P, Q, users, items, vals, order, grouped,
              nbr_indptr, nbr_ids, nbr_w,
              nbr_coef, gamma1, gamma2, lambda_u, lambda_i):
    """One pass over the ratings in `order`; updates P and Q in place.

    Per observed rating: error and logistic slope from the pre-update
    vectors, then p_u and q_i move simultaneously (q_i's gradient uses
    the pre-update p_u). The neighbor pull on p_u uses the neighbors'
    current vectors; with `grouped` the weighted neighbor sum is cached
    across one user's consecutive ratings (neighbor rows cannot change
    in between). Returns the step index of the first non-finite inner
    product, or -1.
    """
    f = P.shape[1]
    wsum = np.zeros(f)
    sw = 0.0
    cur_u = -1
    newp = np.empty(f)
    use_nbrs = nbr_coef != 0.0 and nbr_ids.size > 0
    for s in range(order.size):
        e = order[s]
        u = users[e]
        i = items[e]
        r = vals[e]
        if use_nbrs and (not grouped or u != cur_u):
            sw = 0.0
            for j in range(f):
                wsum[j] = 0.0
            for a in range(nbr_indptr[u], nbr_indptr[u + 1]):
                v = nbr_ids[a]
                w = nbr_w[a]
                sw += w
                for j in range(f):
                    wsum[j] += w * P[v, j]
            cur_u = u
        x = 0.0
        for j in range(f):
            x += P[u, j] * Q[i, j]
        if not np.isfinite(x):
            return s
        if x >= 0:
            t = math.exp(-x)
            g = 1.0 / (1.0 + t)
        else:
            t = math.exp(x)
            g = t / (1.0 + t)
        gp = t / ((1.0 + t) * (1.0 + t))
        gpe = gp * (r - g)
        for j in range(f):
            pj = P[u, j]
            newp[j] = pj + gamma1 * (gpe * Q[i, j]
                                     - nbr_coef * (sw * pj - wsum[j])
                                     - lambda_u * pj)
        for j in range(f):
            qj = Q[i, j]
            Q[i, j] = qj + gamma2 * (gpe * P[u, j] - lambda_i * qj)
        for j in range(f):
            P[u, j] = newp[j]
    return -1


def sgd_epoch(m: FactorModel, train: RatingTable,
              neighbors: NeighborSets | None, cfg: TrainConfig,
              epoch: int = 1) -> FactorModel:
    """One training epoch over scaled ratings; mutates the model in place.

    Iteration is user-major (the table's canonical order) unless
    cfg.shuffle draws a seeded permutation for this epoch.
    """
    if train.r_max != 1.0:
        raise InputError("sgd_epoch expects ratings scaled to (0, 1]")
    indptr, ids, sims = _neighbor_csr(neighbors, m.user_count)
    n = train.n_ratings
    if cfg.shuffle:
        order = spawn_rng(cfg.seed, SHUFFLE_NS, epoch).permutation(n).astype(np.int64)
        grouped = False
    else:
        order = np.arange(n, dtype=np.int64)
        grouped = True
    bad = _sgd_pass(m.P, m.Q, train.users, train.items, train.values,
                    order, grouped, indptr, ids, sims,
                    cfg.neighbor_coefficient, cfg.gamma1, cfg.gamma2,
                    cfg.lambda_u, cfg.lambda_i)
    if bad >= 0:
        raise DivergenceError(
            f"non-finite prediction at epoch {epoch}, step {bad}",
            epoch=epoch, step=int(bad))
    if not (np.isfinite(m.P).all() and np.isfinite(m.Q).all()):
        raise DivergenceError(f"non-finite factors after epoch {epoch}",
                              epoch=epoch)
    return m


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    validation_rmse: float


def train(train_table: RatingTable, validation: RatingTable,
          neighbors: NeighborSets | None, cfg: TrainConfig
          ) -> tuple[FactorModel, list[EpochStats]]:
    """Train with early stopping on validation RMSE.

    Runs epochs until the validation RMSE has not improved for
    cfg.patience consecutive epochs (or max_epochs), and returns the
    snapshot with the best validation RMSE plus the per-epoch history.
    An empty validation set disables early stopping (history carries
    NaN RMSE) and the final model is returned.
    """
    model = init_model(train_table, cfg)
    scaled = scale_table(train_table)
    early = validation.n_ratings > 0
    history: list[EpochStats] = []
    best = model.copy()
    best_rmse = math.inf
    bad_epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        sgd_epoch(model, scaled, neighbors, cfg, epoch=epoch)
        loss = objective(model, scaled, neighbors, cfg)
        if early:
            preds = predict_many(model, validation.users, validation.items)
            val_rmse = float(np.sqrt(np.mean((validation.values - preds) ** 2)))
        else:
            val_rmse = math.nan
        history.append(EpochStats(epoch, loss, val_rmse))
        if early:
            if val_rmse < best_rmse:
                best_rmse = val_rmse
                best = model.copy()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    break
    if not early:
        best = model
    return best, history


def train_rmf(train_table: RatingTable, validation: RatingTable,
              cfg: TrainConfig) -> tuple[FactorModel, list[EpochStats]]:
    """Baseline trainer: no neighbor term, otherwise identical."""
    return train(train_table, validation, None, cfg)


MODEL_FORMAT = "wudiff-model 1"


def save_model(m: FactorModel, path, config_echo: dict | None = None) -> None:
    """Text serialization, 17 significant digits; round-trips exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MODEL_FORMAT + "\n")
        fh.write(f"factors {m.factors}\n")
        fh.write(f"user_count {m.user_count}\n")
        fh.write(f"item_count {m.item_count}\n")
        fh.write(f"r_max {m.r_max:.17g}\n")
        fh.write(f"global_mean {m.global_mean:.17g}\n")
        fh.write("config " + json.dumps(config_echo or {}, sort_keys=True) + "\n")
        fh.write("seen_users " + "".join("1" if s else "0" for s in m.seen_users) + "\n")
        fh.write("seen_items " + "".join("1" if s else "0" for s in m.seen_items) + "\n")
        for row in m.P:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        for row in m.Q:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_model(path) -> tuple[FactorModel, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_FORMAT:
        raise InputError(f"{path}: not a {MODEL_FORMAT!r} file")

    def take(idx, key):
        name, _, value = lines[idx].partition(" ")
        if name != key:
            raise InputError(f"{path}: expected {key!r} on line {idx + 1}")
        return value

    factors = int(take(1, "factors"))
    user_count = int(take(2, "user_count"))
    item_count = int(take(3, "item_count"))
    r_max = float(take(4, "r_max"))
    global_mean = float(take(5, "global_mean"))
    config_echo = json.loads(take(6, "config"))
    seen_users = np.array([c == "1" for c in take(7, "seen_users")], dtype=bool)
    seen_items = np.array([c == "1" for c in take(8, "seen_items")], dtype=bool)
    body = lines[9:]
    if len(body) != user_count + item_count:
        raise InputError(f"{path}: expected {user_count + item_count} factor rows")
    data = np.array([[float(v) for v in row.split()] for row in body])
    if data.shape != (user_count + item_count, factors):
        raise InputError(f"{path}: factor rows have wrong width")
    m = FactorModel(P=data[:user_count], Q=data[user_count:], factors=factors,
                    r_max=r_max, global_mean=global_mean,
                    seen_users=seen_users, seen_items=seen_items)
    return m, config_echo
