"""Retraining oracles and generalization-gap measurement.

The influence rows only predict what retraining would do. Everything here
actually retrains the surrogate on the kept samples and compares.

Epsilon convention: ``epsilon`` always bounds ``||sum of influence rows||``,
the predicted parameter change. The first-order gap is then bounded by
``epsilon * ||grad of test loss||``, which equals ``(e / n) * ||grad||`` with
``e = n * epsilon`` the bound on the raw (unscaled) influence sum.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _model
from .errors import ConfigError, DataError
from .influence import IhvpConfig, group_influence, influence_vectors
from .trainer import TrainConfig, fit_erm, loss
from .types import Dataset, InfluenceSet, ModelParams, PruneMask

logger = logging.getLogger(__name__)

PARAM_CHANGE_FACTOR = 3.0


@dataclass
class GapReport:
    epsilon: float
    achieved_norm: float
    predicted_param_change: float
    actual_param_change: float
    predicted_gap: float
    measured_gap: float
    bound_value: float
    m: int
    n: int
    predicted_gap_signed: float = 0.0
    measured_gap_signed: float = 0.0
    test_grad_norm: float = 0.0
    slack: float = 0.0
    param_change_violation: bool = False
    test_loss_full: float = 0.0
    test_loss_pruned: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def retrain_without(dataset: Dataset, mask: PruneMask, cfg: TrainConfig = TrainConfig()) -> ModelParams:
    """Fit the surrogate on the samples the mask keeps."""
    if mask.n != dataset.n:
        raise DataError(f"mask has n={mask.n}, dataset has n={dataset.n}")
    if mask.selected_count >= dataset.n:
        raise DataError("mask prunes every sample")
    kept = dataset.without(mask)
    missing = np.flatnonzero(kept.class_counts() == 0)
    if missing.size:
        raise DataError(f"pruning eliminates class(es) {missing.tolist()}")
    return fit_erm(kept, cfg)


def heldout_gradient(params: ModelParams, test: Dataset) -> np.ndarray:
    """Gradient of the mean (unregularized) test cross-entropy."""
    return _model.objective_grad(params.flat, test.features, test.labels, params.k, 0.0)


def predict_gap(S: InfluenceSet, mask: PruneMask, test_grad: np.ndarray) -> float:
    """First-order change of the test loss: ``<test_grad, sum of pruned rows>``."""
    test_grad = np.asarray(test_grad, dtype=np.float64)
    if test_grad.shape != (S.N,):
        raise ValueError(f"test gradient has shape {test_grad.shape}, expected ({S.N},)")
    vec, _ = group_influence(S, mask)
    return float(test_grad @ vec)


def measure_gap(
    train: Dataset,
    test: Dataset,
    mask: PruneMask,
    cfg: TrainConfig = TrainConfig(),
    epsilon: Optional[float] = None,
    params: Optional[ModelParams] = None,
    S: Optional[InfluenceSet] = None,
    ihvp: IhvpConfig = IhvpConfig(),
) -> GapReport:
    """Retrain without the mask and compare test losses against the first-order prediction.

    ``params`` and ``S`` are recomputed when not supplied. ``epsilon`` defaults
    to the achieved norm (the tightest level the mask satisfies).
    """
    if test.d != train.d:
        raise DataError(f"train d={train.d} and test d={test.d} disagree")
    if params is None:
        params = fit_erm(train, cfg)
    if S is None:
        S = influence_vectors(params, train, ihvp, grad_tol=cfg.grad_tol)
    vec, achieved = group_influence(S, mask)
    eps = achieved if epsilon is None else float(epsilon)
    g = heldout_gradient(params, test)
    gnorm = float(np.linalg.norm(g))
    pred = float(g @ vec)
    base_loss = loss(params, test)
    if mask.selected_count:
        pruned = retrain_without(train, mask, cfg)
    else:
        pruned = params
    pruned_loss = loss(pruned, test)
    measured = pruned_loss - base_loss
    actual = float(np.linalg.norm(pruned.flat - params.flat))
    bound = eps * gnorm
    violation = actual > PARAM_CHANGE_FACTOR * eps and mask.selected_count > 0
    if violation:
        # only an explicit epsilon is a promise worth warning about
        (logger.warning if epsilon is not None else logger.debug)(
            "parameter change %.3e exceeds %.0f x epsilon (%.3e) for m=%d",
            actual, PARAM_CHANGE_FACTOR, eps, mask.selected_count,
        )
    return GapReport(
        epsilon=eps,
        achieved_norm=achieved,
        predicted_param_change=achieved,
        actual_param_change=actual,
        predicted_gap=abs(pred),
        measured_gap=abs(measured),
        bound_value=bound,
        m=mask.selected_count,
        n=train.n,
        predicted_gap_signed=pred,
        measured_gap_signed=measured,
        test_grad_norm=gnorm,
        slack=abs(measured) - bound,
        param_change_violation=bool(violation),
        test_loss_full=base_loss,
        test_loss_pruned=pruned_loss,
    )


def loo_sweep(
    dataset: Dataset,
    params: ModelParams,
    S: InfluenceSet,
    cfg: TrainConfig = TrainConfig(),
    indices: Optional[Sequence[int]] = None,
) -> dict:
    """Predicted versus retrained single-sample parameter changes.

    Returns a dict with ``index``, ``predicted_norm``, ``actual_norm`` and
    ``cosine`` arrays.
    """
    idx = np.arange(dataset.n) if indices is None else np.asarray(indices, dtype=np.int64)
    theta = params.flat
    actual = np.empty((idx.size, S.N))
    for row, i in enumerate(idx):
        actual[row] = retrain_without(dataset, PruneMask.from_indices(dataset.n, [i]), cfg).flat - theta
    pred = S.vectors[idx]
    pn = np.linalg.norm(pred, axis=1)
    an = np.linalg.norm(actual, axis=1)
    denom = np.where(pn * an > 0, pn * an, 1.0)
    cos = np.where(pn * an > 0, np.einsum("ij,ij->i", pred, actual) / denom, 1.0)
    return {"index": idx, "predicted_norm": pn, "actual_norm": an, "cosine": cos}


def _ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(x.size)
    start = 0
    while start < x.size:
        stop = start
        while stop + 1 < x.size and xs[stop + 1] == xs[start]:
            stop += 1
        ranks[order[start : stop + 1]] = 0.5 * (start + stop) + 1.0
        start = stop + 1
    return ranks


def correlation(xs, ys, kind: str = "pearson") -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d and of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 points")
    if kind == "spearman":
        x, y = _ranks(x), _ranks(y)
    elif kind != "pearson":
        raise ConfigError(f"unknown correlation kind {kind!r}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(xc @ xc))
    sy = float(np.sqrt(yc @ yc))
    if sx == 0 or sy == 0:
        raise ValueError("zero variance input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))
