"""Command-line front end.

Commands: ingest, train, eval, sweep, groups. Settings come from an
optional key=value config file overridden by flags; every run is fully
determined by the resolved config plus the seed, and all artifacts embed
that resolved config so reruns are reproducible byte for byte.

Exit codes: 0 success, 2 usage/config error, 3 data error,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .core import Dataset
from .diffusion import build_graph, dump_neighbors, top_k_neighbors
from .errors import ConfigError, DivergenceError, InputError
from .eval import (MOVIELENS_GROUPS, ModelSpec, UserGroupSpec, group_report,
                   run_cv, sweep)
from .ingest import LoadOptions, dump_dataset, holdout_validation, load_tsv
from .mf import TrainConfig, save_model, train, train_rmf
from .weighting import compute_user_stats

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_cols(s: str) -> tuple[int, int, int]:
    parts = [int(p) for p in s.split(",")]
    if len(parts) != 3 or any(p < 0 for p in parts):
        raise ValueError(f"expected three non-negative column indices, got {s!r}")
    return tuple(parts)


def _parse_floats(s: str) -> list[float]:
    return [float(p) for p in s.split(",") if p.strip() != ""]


def _parse_bins(s: str) -> tuple[tuple[int, int], ...]:
    out = []
    for part in s.split(","):
        r, _, t = part.partition(":")
        out.append((int(r), int(t)))
    return tuple(out)


@dataclass
class RunConfig:
    """Every knob of a run; unknown config keys are rejected."""

    ratings: str | None = None
    tags: str | None = None
    skip_header: bool = False
    rating_mode: str = "explicit"
    tags_layout: str = "triples"
    rating_cols: tuple[int, int, int] = (0, 1, 2)
    tag_cols: tuple[int, int, int] = (0, 1, 2)
    r_max: float | None = None
    model: str = "wudiff_rmf"
    factors: int = 20
    alpha: float = 0.01
    lambda_u: float = 0.01
    lambda_i: float = 0.01
    gamma1: float = 0.01
    gamma2: float = 0.01
    max_epochs: int = 200
    patience: int = 1
    shuffle: bool = False
    single_sided_reg: bool = False
    lambda_mix: float = 0.5
    k_neighbors: int = 40
    clamp_nonneg: bool = False
    folds: int = 10
    repeats: int = 10
    seed: int = 0
    validation_fraction: float = 0.1
    jobs: int = 1
    out_dir: str = "out"
    group_bins: tuple[tuple[int, int], ...] = MOVIELENS_GROUPS.bounds
    dump_neighbors: bool = False


# config-file key -> (RunConfig field, parser); "lambda" is the mixing
# weight of the two diffusion layers, distinct from lambda_u/lambda_i
_KEY_PARSERS = {
    "ratings": ("ratings", str),
    "tags": ("tags", str),
    "skip_header": ("skip_header", _parse_bool),
    "rating_mode": ("rating_mode", str),
    "tags_layout": ("tags_layout", str),
    "rating_cols": ("rating_cols", _parse_cols),
    "tag_cols": ("tag_cols", _parse_cols),
    "r_max": ("r_max", float),
    "model": ("model", str),
    "factors": ("factors", int),
    "alpha": ("alpha", float),
    "lambda_u": ("lambda_u", float),
    "lambda_i": ("lambda_i", float),
    "gamma1": ("gamma1", float),
    "gamma2": ("gamma2", float),
    "max_epochs": ("max_epochs", int),
    "patience": ("patience", int),
    "shuffle": ("shuffle", _parse_bool),
    "single_sided_reg": ("single_sided_reg", _parse_bool),
    "lambda": ("lambda_mix", float),
    "k_neighbors": ("k_neighbors", int),
    "clamp_nonneg": ("clamp_nonneg", _parse_bool),
    "folds": ("folds", int),
    "repeats": ("repeats", int),
    "seed": ("seed", int),
    "validation_fraction": ("validation_fraction", float),
    "jobs": ("jobs", int),
    "out_dir": ("out_dir", str),
    "group_bins": ("group_bins", _parse_bins),
    "dump_neighbors": ("dump_neighbors", _parse_bool),
}


def _read_config_file(path) -> tuple[dict, list[str]]:
    values = {}
    problems = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, raw = line.partition("=")
            if not sep:
                problems.append(f"{path}:{line_no}: expected key=value, got {line!r}")
                continue
            key = key.strip()
            raw = raw.strip()
            if key not in _KEY_PARSERS:
                problems.append(f"{path}:{line_no}: unknown key {key!r}")
                continue
            field_name, parser = _KEY_PARSERS[key]
            try:
                values[field_name] = parser(raw)
            except ValueError as exc:
                problems.append(f"{path}:{line_no}: bad value for {key}: {exc}")
    return values, problems


def read_config_file(path) -> dict:
    """key=value lines; blank lines and # comments ignored."""
    values, problems = _read_config_file(path)
    if problems:
        raise ConfigError(problems)
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then config file, then flags; validates everything at once."""
    values = {}
    problems = []
    if getattr(args, "config", None):
        values, problems = _read_config_file(args.config)
    field_names = {f.name for f in fields(RunConfig)}
    for name in field_names:
        flag_val = getattr(args, name, None)
        if flag_val is not None:
            values[name] = flag_val
    cfg = RunConfig(**values)

    if cfg.rating_mode not in ("explicit", "implicit"):
        problems.append(f"rating_mode must be explicit or implicit, got {cfg.rating_mode!r}")
    if cfg.tags_layout not in ("triples", "counts"):
        problems.append(f"tags_layout must be triples or counts, got {cfg.tags_layout!r}")
    if cfg.model not in ("rmf", "wudiff_rmf"):
        problems.append(f"model must be rmf or wudiff_rmf, got {cfg.model!r}")
    if cfg.r_max is not None and cfg.r_max <= 0:
        problems.append("r_max must be positive")
    if cfg.factors < 1:
        problems.append("factors must be >= 1")
    if cfg.alpha < 0:
        problems.append("alpha must be >= 0")
    if cfg.lambda_u < 0 or cfg.lambda_i < 0:
        problems.append("lambda_u and lambda_i must be >= 0")
    if cfg.gamma1 <= 0 or cfg.gamma2 <= 0:
        problems.append("gamma1 and gamma2 must be > 0")
    if cfg.max_epochs < 0:
        problems.append("max_epochs must be >= 0")
    if cfg.patience < 1:
        problems.append("patience must be >= 1")
    if not 0 <= cfg.lambda_mix <= 1:
        problems.append("lambda must be in [0, 1]")
    if cfg.k_neighbors < 1:
        problems.append("k_neighbors must be >= 1")
    if cfg.folds < 2:
        problems.append("folds must be >= 2")
    if cfg.repeats < 1:
        problems.append("repeats must be >= 1")
    if not 0 <= cfg.validation_fraction < 1:
        problems.append("validation_fraction must be in [0, 1)")
    if cfg.jobs < 1:
        problems.append("jobs must be >= 1")
    if problems:
        raise ConfigError(problems)
    return cfg


def config_dict(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = list(list(x) if isinstance(x, tuple) else x for x in v)
        out[f.name] = v
    return out


def _load_dataset(cfg: RunConfig) -> Dataset:
    if not cfg.ratings:
        raise ConfigError("ratings path is required (set ratings= or --ratings)")
    opts = LoadOptions(skip_header=cfg.skip_header, rating_mode=cfg.rating_mode,
                       rating_cols=cfg.rating_cols, tags_layout=cfg.tags_layout,
                       tag_cols=cfg.tag_cols, r_max=cfg.r_max)
    d = load_tsv(cfg.ratings, cfg.tags, opts)
    if d.ratings.n_ratings == 0:
        raise InputError(f"{cfg.ratings}: no ratings found")
    return d


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(cfg: RunConfig, seed: int | None = None) -> TrainConfig:
    return TrainConfig(factors=cfg.factors, alpha=cfg.alpha,
                       lambda_u=cfg.lambda_u, lambda_i=cfg.lambda_i,
                       gamma1=cfg.gamma1, gamma2=cfg.gamma2,
                       max_epochs=cfg.max_epochs, patience=cfg.patience,
                       seed=cfg.seed if seed is None else seed,
                       shuffle=cfg.shuffle,
                       single_sided_reg=cfg.single_sided_reg)


def _model_spec(cfg: RunConfig) -> ModelSpec:
    return ModelSpec(name=cfg.model, lambda_mix=cfg.lambda_mix,
                     k_neighbors=cfg.k_neighbors, clamp_nonneg=cfg.clamp_nonneg)


def cmd_ingest(cfg: RunConfig) -> int:
    d = _load_dataset(cfg)
    out = _out_dir(cfg)
    dump_dataset(d, out / "ratings.tsv", out / "tags.tsv")
    density = d.ratings.n_ratings / (d.user_count * d.item_count)
    print(f"users {d.user_count}")
    print(f"items {d.item_count}")
    print(f"tags {d.tag_count}")
    print(f"ratings {d.ratings.n_ratings}")
    print(f"tag_entries {d.tags.n_entries}")
    print(f"tag_assignments {int(d.tags.counts.sum())}")
    print(f"r_max {d.ratings.r_max:g}")
    print(f"density {density:.6g}")
    print(f"wrote {out / 'ratings.tsv'} and {out / 'tags.tsv'}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    d = _load_dataset(cfg)
    out = _out_dir(cfg)
    train_t, val_t = holdout_validation(d, cfg.validation_fraction, cfg.seed)
    tcfg = _train_config(cfg)
    if cfg.model == "rmf":
        model, history = train_rmf(train_t, val_t, tcfg)
    else:
        stats = compute_user_stats(train_t)
        graph = build_graph(train_t, d.tags, stats)
        neighbors = top_k_neighbors(graph, cfg.lambda_mix, cfg.k_neighbors,
                                    clamp_nonneg=cfg.clamp_nonneg)
        if cfg.dump_neighbors:
            dump_neighbors(neighbors, out / "neighbors.tsv")
        model, history = train(train_t, val_t, neighbors, tcfg)
    echo = config_dict(cfg)
    save_model(model, out / "model.txt", config_echo=echo)
    with open(out / "history.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("# config: " + json.dumps(echo, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "validation_rmse"])
        for h in history:
            w.writerow([h.epoch, f"{h.train_loss:.12g}", f"{h.validation_rmse:.12g}"])
    print(f"trained {cfg.model} for {len(history)} epochs; "
          f"wrote {out / 'model.txt'} and {out / 'history.csv'}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    d = _load_dataset(cfg)
    out = _out_dir(cfg)
    echo = config_dict(cfg)
    report = run_cv(d, _model_spec(cfg), _train_config(cfg), folds=cfg.folds,
                    repeats=cfg.repeats, seed=cfg.seed,
                    validation_fraction=cfg.validation_fraction,
                    jobs=cfg.jobs, config_echo=echo)
    report.write_csv(out / "report.csv")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    print(f"mae {report.mae_mean:.6g} +/- {report.mae_std:.6g}")
    print(f"rmse {report.rmse_mean:.6g} +/- {report.rmse_std:.6g}")
    print(f"wrote {out / 'report.csv'} and {out / 'report.json'}")
    return 0


def cmd_sweep(cfg: RunConfig, param: str, values: list[float]) -> int:
    d = _load_dataset(cfg)
    out = _out_dir(cfg)
    points = sweep(d, param, values, _model_spec(cfg), _train_config(cfg),
                   folds=cfg.folds, repeats=cfg.repeats, seed=cfg.seed,
                   validation_fraction=cfg.validation_fraction, jobs=cfg.jobs)
    echo = config_dict(cfg)
    echo["sweep_param"] = param
    echo["sweep_values"] = values
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("# config: " + json.dumps(echo, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["value", "rmse_mean", "rmse_stddev", "mae_mean", "mae_stddev"])
        for p in points:
            w.writerow([f"{p.value:.12g}", f"{p.rmse_mean:.12g}", f"{p.rmse_std:.12g}",
                        f"{p.mae_mean:.12g}", f"{p.mae_std:.12g}"])
    for p in points:
        print(f"{param}={p.value:g} rmse {p.rmse_mean:.6g} +/- {p.rmse_std:.6g}")
    print(f"wrote {out / 'sweep.csv'}")
    return 0


def cmd_groups(cfg: RunConfig) -> int:
    d = _load_dataset(cfg)
    out = _out_dir(cfg)
    spec = UserGroupSpec(bounds=cfg.group_bins)
    models = [ModelSpec(name="rmf"), _model_spec(cfg)]
    if cfg.model == "rmf":
        models = [ModelSpec(name="rmf")]
    cells = group_report(d, models, spec, _train_config(cfg), folds=cfg.folds,
                         repeats=cfg.repeats, seed=cfg.seed,
                         validation_fraction=cfg.validation_fraction)
    echo = config_dict(cfg)
    names = list(cells[0].rmse_by_model) if cells else []
    with open(out / "groups.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("# config: " + json.dumps(echo, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["group", "label", "test_users"] + [f"rmse_{n}" for n in names])
        for c in cells:
            row = [c.group, c.label, c.test_users]
            for n in names:
                v = c.rmse_by_model[n]
                row.append("" if v != v else f"{v:.12g}")
            w.writerow(row)
    print(f"wrote {out / 'groups.csv'}")
    return 0


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--ratings", help="ratings TSV path")
    p.add_argument("--tags", help="tags TSV path")
    p.add_argument("--skip-header", dest="skip_header", action="store_const",
                   const=True, help="skip the first line of input files")
    p.add_argument("--rating-mode", dest="rating_mode",
                   choices=["explicit", "implicit"])
    p.add_argument("--tags-layout", dest="tags_layout",
                   choices=["triples", "counts"])
    p.add_argument("--rating-cols", dest="rating_cols", type=_parse_cols,
                   metavar="U,I,R")
    p.add_argument("--tag-cols", dest="tag_cols", type=_parse_cols,
                   metavar="U,I,T")
    p.add_argument("--r-max", dest="r_max", type=float)
    p.add_argument("--model", choices=["rmf", "wudiff_rmf"])
    p.add_argument("--factors", type=int)
    p.add_argument("--alpha", type=float, help="neighbor regularization strength")
    p.add_argument("--lambda-u", dest="lambda_u", type=float)
    p.add_argument("--lambda-i", dest="lambda_i", type=float)
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--shuffle", action="store_const", const=True)
    p.add_argument("--single-sided-reg", dest="single_sided_reg",
                   action="store_const", const=True)
    p.add_argument("--lambda", dest="lambda_mix", type=float,
                   help="mix of rating-layer vs tag-layer diffusion, in [0,1]")
    p.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    p.add_argument("--clamp-nonneg", dest="clamp_nonneg", action="store_const",
                   const=True, help="clamp negative similarities to zero")
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--validation-fraction", dest="validation_fraction", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--group-bins", dest="group_bins", type=_parse_bins,
                   metavar="R:T,R:T,...")
    p.add_argument("--dump-neighbors", dest="dump_neighbors",
                   action="store_const", const=True)
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wudiff",
        description="Tag-aware matrix factorization recommender and "
                    "evaluation harness")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("ingest", "parse dataset files, write the canonical dump and stats"),
        ("train", "train one model on the full dataset (validation held out)"),
        ("eval", "repeated k-fold cross-validation report"),
        ("sweep", "cross-validated sweep over lambda, k_neighbors or alpha"),
        ("groups", "per user-group RMSE comparison"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common_flags(p)
        if name == "sweep":
            p.add_argument("--param", required=True,
                           choices=["lambda", "k_neighbors", "alpha"])
            p.add_argument("--values", required=True, type=_parse_floats,
                           metavar="V1,V2,...")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.param, args.values)
        if args.command == "groups":
            return cmd_groups(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
