"""Score-based selection baselines.

Each method assigns every training sample a score where higher means more
worth keeping; :func:`select_keep` keeps the top scores and returns the pruned
complement as a mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _model
from .errors import ConfigError
from .rng import stream
from .trainer import SgdTrace
from .types import Dataset, InfluenceSet, ModelParams, PruneMask

METHODS = ("random", "herding", "forgetting", "grand", "el2n", "influence_norm")


@dataclass(frozen=True)
class ScoreVector:
    scores: np.ndarray
    method: str

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)

    @property
    def n(self) -> int:
        return int(self.scores.shape[0])


@dataclass(frozen=True)
class ScoringContext:
    """Inputs a baseline may need; only the ones its method uses must be set."""

    dataset: Optional[Dataset] = None
    params: Optional[ModelParams] = None
    trace: Optional[SgdTrace] = None
    influence: Optional[InfluenceSet] = None
    seed: Optional[int] = None
    n: Optional[int] = None


def _need(value, what: str, method: str):
    if value is None:
        raise ConfigError(f"method {method!r} needs {what}")
    return value


def herding_scores(dataset: Dataset) -> np.ndarray:
    """Negative distance to the sample's class centroid."""
    X, y = dataset.features, dataset.labels
    scores = np.empty(dataset.n)
    for c in np.unique(y):
        members = y == c
        mu = X[members].mean(axis=0)
        scores[members] = -np.linalg.norm(X[members] - mu, axis=1)
    return scores


def forgetting_scores(trace: SgdTrace) -> np.ndarray:
    """Correct-to-incorrect transitions between consecutive epochs.

    Samples never classified correctly score ``epochs + 1``.
    """
    c = trace.correct
    events = (c[:-1] & ~c[1:]).sum(axis=0).astype(np.float64)
    never = ~c.any(axis=0)
    events[never] = trace.epochs + 1
    return events


def grand_scores(params: ModelParams, dataset: Dataset) -> np.ndarray:
    G = _model.ce_gradients(params.flat, dataset.features, dataset.labels, params.k)
    return np.linalg.norm(G, axis=1)


def el2n_scores(params: ModelParams, dataset: Dataset) -> np.ndarray:
    _, E = _model.error_matrix(params.flat, dataset.features, dataset.labels, params.k)
    return np.linalg.norm(E, axis=1)


def score(method: str, context: ScoringContext) -> ScoreVector:
    if method == "random":
        n = context.n if context.n is not None else _need(context.dataset, "a dataset (or n)", method).n
        seed = _need(context.seed, "a seed", method)
        return ScoreVector(stream(seed, "baseline-random").random(n), method)
    if method == "herding":
        return ScoreVector(herding_scores(_need(context.dataset, "features", method)), method)
    if method == "forgetting":
        return ScoreVector(forgetting_scores(_need(context.trace, "an SGD trace", method)), method)
    if method == "grand":
        ds = _need(context.dataset, "a dataset", method)
        return ScoreVector(grand_scores(_need(context.params, "fitted params", method), ds), method)
    if method == "el2n":
        ds = _need(context.dataset, "a dataset", method)
        return ScoreVector(el2n_scores(_need(context.params, "fitted params", method), ds), method)
    if method == "influence_norm":
        return ScoreVector(_need(context.influence, "an influence set", method).row_norms(), method)
    raise ConfigError(f"unknown baseline method {method!r}; choose from {', '.join(METHODS)}")


def select_keep(scores: ScoreVector, keep_m: int) -> PruneMask:
    """Keep the ``keep_m`` highest scores (ties: lower index kept); return the pruned rest."""
    n = scores.n
    if not 0 <= keep_m <= n:
        raise ConfigError(f"keep_m={keep_m} outside [0, {n}]")
    order = np.argsort(-scores.scores, kind="stable")
    bits = np.ones(n, dtype=bool)
    bits[order[:keep_m]] = False
    return PruneMask(bits)


def prune_count(n: int, ratio: float) -> int:
    """Number of samples pruned at a given prune ratio."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"prune ratio {ratio} outside [0, 1]")
    return int(round(ratio * n))
