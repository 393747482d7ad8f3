"""Metrics, cross-validated experiment runner, sweeps, and group analysis.

A run is (repeat, fold): repeat r derives its fold plan from seed + r,
the fold's train split alone feeds the weighting statistics, the graph,
the neighbor sets, and the trainer (no test leakage), and predictions on
the held-out fold yield MAE/RMSE. Reports aggregate mean and population
standard deviation over all runs.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import betainc

from .core import Dataset
from .diffusion import build_graph, top_k_neighbors
from .errors import ConfigError, InputError
from .ingest import make_folds, split
from .mf import TrainConfig, predict_many, train, train_rmf
from .seeding import TRAIN_NS, subseed
from .weighting import Bm25Params, compute_user_stats

MODEL_NAMES = ("rmf", "wudiff_rmf")


def mae(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.size == 0 or pred.shape != truth.shape:
        raise InputError("mae needs non-empty aligned prediction/truth arrays")
    return float(np.mean(np.abs(truth - pred)))


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.size == 0 or pred.shape != truth.shape:
        raise InputError("rmse needs non-empty aligned prediction/truth arrays")
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


@dataclass(frozen=True)
class ModelSpec:
    """Which model to run and its diffusion settings (ignored by rmf)."""

    name: str = "wudiff_rmf"
    lambda_mix: float = 0.5
    k_neighbors: int = 40
    clamp_nonneg: bool = False

    def __post_init__(self):
        problems = []
        if self.name not in MODEL_NAMES:
            problems.append(f"model must be one of {MODEL_NAMES}, got {self.name!r}")
        if not 0.0 <= self.lambda_mix <= 1.0:
            problems.append(f"lambda must be in [0, 1], got {self.lambda_mix}")
        if self.k_neighbors < 1:
            problems.append(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class RunRecord:
    repeat: int
    fold: int
    mae: float
    rmse: float


@dataclass(frozen=True)
class EvalReport:
    records: list[RunRecord]
    mae_mean: float
    mae_std: float
    rmse_mean: float
    rmse_std: float
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "mae": {"mean": self.mae_mean, "stddev": self.mae_std},
            "rmse": {"mean": self.rmse_mean, "stddev": self.rmse_std},
            "runs": [{"repeat": r.repeat, "fold": r.fold,
                      "mae": r.mae, "rmse": r.rmse} for r in self.records],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("# config: " + json.dumps(self.config, sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow(["metric", "mean", "stddev", "repeat", "fold", "value"])
            w.writerow(["mae", f"{self.mae_mean:.12g}", f"{self.mae_std:.12g}", "", "", ""])
            w.writerow(["rmse", f"{self.rmse_mean:.12g}", f"{self.rmse_std:.12g}", "", "", ""])
            for r in self.records:
                w.writerow(["mae", "", "", r.repeat, r.fold, f"{r.mae:.12g}"])
                w.writerow(["rmse", "", "", r.repeat, r.fold, f"{r.rmse:.12g}"])


def _aggregate(records: list[RunRecord], config: dict) -> EvalReport:
    maes = np.array([r.mae for r in records])
    rmses = np.array([r.rmse for r in records])
    return EvalReport(records=records,
                      mae_mean=float(maes.mean()), mae_std=float(maes.std()),
                      rmse_mean=float(rmses.mean()), rmse_std=float(rmses.std()),
                      config=config)


def run_single(dataset: Dataset, model_spec: ModelSpec, cfg: TrainConfig,
               plan, test_fold: int, bm25_params: Bm25Params | None = None):
    """Train on one fold and return (model, test predictions, test table)."""
    train_t, val_t, test_t = split(dataset, plan, test_fold)
    if model_spec.name == "rmf":
        model, _ = train_rmf(train_t, val_t, cfg)
    else:
        stats = compute_user_stats(train_t)
        graph = build_graph(train_t, dataset.tags, stats, bm25_params)
        neighbors = top_k_neighbors(graph, model_spec.lambda_mix,
                                    model_spec.k_neighbors,
                                    clamp_nonneg=model_spec.clamp_nonneg)
        model, _ = train(train_t, val_t, neighbors, cfg)
    preds = predict_many(model, test_t.users, test_t.items)
    return model, preds, test_t


def _run_one(args):
    dataset, model_spec, cfg, folds, validation_fraction, repeat, fold, seed = args
    plan = make_folds(dataset, folds, seed + repeat, validation_fraction)
    run_cfg = _cfg_for_run(cfg, seed, repeat, fold)
    _, preds, test_t = run_single(dataset, model_spec, run_cfg, plan, fold)
    return RunRecord(repeat=repeat, fold=fold,
                     mae=mae(preds, test_t.values),
                     rmse=rmse(preds, test_t.values))


def _cfg_for_run(cfg: TrainConfig, seed: int, repeat: int, fold: int) -> TrainConfig:
    return replace(cfg, seed=subseed(seed, TRAIN_NS, repeat, fold))


def run_cv(dataset: Dataset, model_spec: ModelSpec, cfg: TrainConfig,
           folds: int = 10, repeats: int = 10, seed: int = 0,
           validation_fraction: float = 0.1, jobs: int = 1,
           config_echo: dict | None = None) -> EvalReport:
    """Repeated k-fold cross-validation.

    Repeat r uses fold seed `seed + r`; each (repeat, fold) trains with
    its own derived seed, identically for every model spec so that runs
    are comparable. Runs may execute in parallel; aggregation order is
    fixed by (repeat, fold).
    """
    tasks = [(dataset, model_spec, cfg, folds, validation_fraction, rep, fold, seed)
             for rep in range(repeats) for fold in range(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_one, tasks, chunksize=1))
    else:
        records = [_run_one(t) for t in tasks]
    return _aggregate(records, config_echo or {})


@dataclass(frozen=True)
class SweepPoint:
    value: float
    rmse_mean: float
    rmse_std: float
    mae_mean: float
    mae_std: float


SWEEP_PARAMS = ("lambda", "k_neighbors", "alpha")


def sweep(dataset: Dataset, param: str, values, model_spec: ModelSpec,
          cfg: TrainConfig, folds: int = 10, repeats: int = 1, seed: int = 0,
          validation_fraction: float = 0.1, jobs: int = 1) -> list[SweepPoint]:
    """One run_cv per grid value of `param`, same seeds at every point."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}, got {param!r}")
    values = list(values)
    if not values:
        raise InputError("sweep grid is empty")
    points = []
    for v in values:
        spec, run_cfg = model_spec, cfg
        if param == "lambda":
            spec = replace(model_spec, lambda_mix=float(v))
        elif param == "k_neighbors":
            spec = replace(model_spec, k_neighbors=int(v))
        else:
            run_cfg = replace(cfg, alpha=float(v))
        report = run_cv(dataset, spec, run_cfg, folds=folds, repeats=repeats,
                        seed=seed, validation_fraction=validation_fraction,
                        jobs=jobs)
        points.append(SweepPoint(value=float(v),
                                 rmse_mean=report.rmse_mean, rmse_std=report.rmse_std,
                                 mae_mean=report.mae_mean, mae_std=report.mae_std))
    return points


def paired_ttest(per_fold_a, per_fold_b) -> tuple[float, float]:
    """Two-tailed paired t-test over per-fold metric sequences.

    Returns (t, p) with p from the regularized incomplete beta form of
    the t CDF. Degenerate difference sequences (zero variance, including
    identical inputs) are rejected.
    """
    a = np.asarray(per_fold_a, dtype=np.float64)
    b = np.asarray(per_fold_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise InputError("paired_ttest needs two aligned sequences of length >= 2")
    d = a - b
    n = d.size
    sd = float(d.std(ddof=1))
    if sd == 0.0 or not math.isfinite(sd):
        raise InputError("paired_ttest differences have zero variance (degenerate)")
    t = float(d.mean()) / (sd / math.sqrt(n))
    df = n - 1
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return t, p


@dataclass(frozen=True)
class UserGroupSpec:
    """Ordered (max_ratings, max_tags) classes plus a final catch-all.

    A user falls into the first class whose both bounds cover their train
    rating count and tag assignment count; users beyond every bound land
    in the catch-all. The default is the 13-class movie preset.
    """

    bounds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.bounds:
            raise ConfigError("group spec needs at least one bounded class")

    @property
    def n_groups(self) -> int:
        return len(self.bounds) + 1

    def group_of(self, rating_count: int, tag_count: int) -> int:
        for g, (rb, tb) in enumerate(self.bounds):
            if rating_count <= rb and tag_count <= tb:
                return g
        return len(self.bounds)

    def label(self, g: int) -> str:
        if g < len(self.bounds):
            rb, tb = self.bounds[g]
            return f"({rb},{tb})"
        rb, tb = self.bounds[-1]
        return f"(>{rb},>{tb})"


MOVIELENS_GROUPS = UserGroupSpec(bounds=(
    (5, 10), (10, 10), (10, 20), (15, 20), (15, 30), (20, 20), (20, 30),
    (25, 30), (30, 30), (30, 40), (35, 40), (50, 50),
))


@dataclass(frozen=True)
class GroupCell:
    group: int
    label: str
    test_users: int
    rmse_by_model: dict


def group_report(dataset: Dataset, model_specs: list[ModelSpec],
                 group_spec: UserGroupSpec, cfg: TrainConfig,
                 folds: int = 10, repeats: int = 1, seed: int = 0,
                 validation_fraction: float = 0.1) -> list[GroupCell]:
    """Per-group RMSE for each model.

    Users are grouped per run by their train-split rating count and
    (unsplit) tag assignment count. A cell's RMSE is the mean over runs
    where the group had test ratings; absent groups yield NaN and a zero
    user count.
    """
    n_groups = group_spec.n_groups
    labels = []
    for idx, spec in enumerate(model_specs):
        name = spec.name
        if name in labels:
            name = f"{name}#{idx}"
        labels.append(name)
    per_group_rmse = {lab: [[] for _ in range(n_groups)] for lab in labels}
    test_user_counts = np.zeros(n_groups, dtype=np.int64)
    tag_counts = dataset.tags.user_totals
    for rep in range(repeats):
        plan = make_folds(dataset, folds, seed + rep, validation_fraction)
        for fold in range(folds):
            run_cfg = _cfg_for_run(cfg, seed, rep, fold)
            train_t, _, test_t = split(dataset, plan, fold)
            rating_counts = np.diff(train_t.indptr)
            groups = np.array([group_spec.group_of(int(rating_counts[u]),
                                                   int(tag_counts[u]))
                               for u in range(dataset.user_count)])
            test_groups = groups[test_t.users]
            for g in range(n_groups):
                mask = test_groups == g
                if mask.any():
                    test_user_counts[g] += np.unique(test_t.users[mask]).size
            for lab, spec in zip(labels, model_specs):
                _, preds, _ = run_single(dataset, spec, run_cfg, plan, fold)
                sq = (test_t.values - preds) ** 2
                for g in range(n_groups):
                    mask = test_groups == g
                    if mask.any():
                        per_group_rmse[lab][g].append(float(np.sqrt(sq[mask].mean())))
    cells = []
    for g in range(n_groups):
        by_model = {}
        for lab in labels:
            runs = per_group_rmse[lab][g]
            by_model[lab] = float(np.mean(runs)) if runs else math.nan
        cells.append(GroupCell(group=g, label=group_spec.label(g),
                               test_users=int(test_user_counts[g]),
                               rmse_by_model=by_model))
    return cells
