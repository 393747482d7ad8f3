"""Recommender library: regularized matrix factorization with a
similar-user term from weighted diffusion on the user-item-tag graph."""

from .core import (Dataset, RatingTable, TagTable, degree_item, degree_tag,
                   degree_user_items, degree_user_tags, empty_tag_table)
from .diffusion import (NeighborSets, WeightedTripartiteGraph, build_graph,
                        combined_similarity, dump_neighbors, top_k_neighbors,
                        udiff_rating, udiff_tag, wudiff_rating, wudiff_tag)
from .errors import (ConfigError, DivergenceError, InputError, ParseError,
                     WudiffError)
from .eval import (EvalReport, ModelSpec, UserGroupSpec, group_report, mae,
                   paired_ttest, rmse, run_cv, sweep)
from .ingest import (FoldPlan, LoadOptions, dump_dataset, load_tsv,
                     make_folds, split)
from .mf import (FactorModel, TrainConfig, load_model, logistic,
                 logistic_deriv, objective, predict, predict_many,
                 save_model, scale_rating, scale_table, sgd_epoch, train,
                 train_rmf, unscale)
from .weighting import (Bm25Params, UserRatingStats, bm25, compute_user_stats,
                        zscore)

__version__ = "0.1.0"
