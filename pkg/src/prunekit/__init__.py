"""Influence-based dataset pruning on a multinomial-logistic surrogate.

Typical use::

    from prunekit import fit_erm, influence_vectors, prune_cardinality, TrainConfig

    params = fit_erm(train, TrainConfig(reg_lambda=1e-2))
    S = influence_vectors(params, train)
    report = prune_cardinality(S, m=60)
    kept = train.without(report.mask)
"""

__version__ = "0.1.0"

from .baselines import METHODS, ScoreVector, ScoringContext, score, select_keep
from .data_io import (
    SyntheticSpec,
    load_dataset,
    load_mask,
    make_synthetic,
    save_dataset,
    save_mask,
    train_test_split,
    write_report,
)
from .errors import ConfigError, ConvergenceError, DataError, PrunekitError, SolverError
from .influence import IhvpConfig, build_hessian, group_influence, influence_vectors, inverse_hvp
from .oracle import GapReport, correlation, loo_sweep, measure_gap, predict_gap, retrain_without
from .pruner import AnnealConfig, exhaustive_prune, prune_cardinality, prune_generalization
from .trainer import TrainConfig, fit_erm, fit_sgd_traced, loss
from .types import Dataset, InfluenceSet, ModelParams, PruneMask, PruneReport

__all__ = [
    "METHODS",
    "AnnealConfig",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "Dataset",
    "GapReport",
    "IhvpConfig",
    "InfluenceSet",
    "ModelParams",
    "PruneMask",
    "PruneReport",
    "PrunekitError",
    "ScoreVector",
    "ScoringContext",
    "SolverError",
    "SyntheticSpec",
    "TrainConfig",
    "build_hessian",
    "correlation",
    "exhaustive_prune",
    "fit_erm",
    "fit_sgd_traced",
    "group_influence",
    "influence_vectors",
    "inverse_hvp",
    "load_dataset",
    "load_mask",
    "loo_sweep",
    "loss",
    "make_synthetic",
    "measure_gap",
    "predict_gap",
    "prune_cardinality",
    "prune_generalization",
    "retrain_without",
    "save_dataset",
    "save_mask",
    "score",
    "select_keep",
    "train_test_split",
    "write_report",
]
