"""The standard synthetic benchmark and the experiment protocols run on it.

The benchmark is three Gaussian classes in eight dimensions with the default
:class:`~prunekit.data_io.SyntheticSpec` geometry (separation 5, unit noise),
200 samples and ``lambda = 1e-2``. Both protocols below return plain rows so
callers can write them as CSV, plot them, or assert on them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import baselines
from .data_io import SyntheticSpec, make_synthetic, train_test_split
from .errors import DataError
from .influence import IhvpConfig, influence_vectors
from .oracle import measure_gap, retrain_without
from .pruner import AnnealConfig, prune_cardinality, prune_generalization
from .rng import stream
from .trainer import TrainConfig, fit_erm, fit_sgd_traced, loss
from .types import Dataset, PruneMask

STANDARD_N = 200
STANDARD_LAMBDA = 1e-2
STANDARD_K = 3
STANDARD_D = 8

#: epsilon grid of the gap sweep, in units of the median influence-row norm
EPS_FACTORS = (0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0)
#: largest pruned fraction the gap sweep allows
SWEEP_MAX_FRACTION = 0.25
PRUNE_RATIOS = (0.3, 0.5, 0.7)


def standard_spec(seed: int = 0) -> SyntheticSpec:
    per_class = -(-STANDARD_N // STANDARD_K)
    return SyntheticSpec(n_per_class=per_class, k=STANDARD_K, d=STANDARD_D, seed=seed)


def standard_dataset(seed: int = 0) -> Dataset:
    """200 samples: the first rows of a (shuffled) 67-per-class draw."""
    return make_synthetic(standard_spec(seed)).subset(np.arange(STANDARD_N))


def standard_split(seed: int = 0, test_fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    return train_test_split(standard_dataset(seed), test_fraction, seed)


def standard_train_config() -> TrainConfig:
    return TrainConfig(reg_lambda=STANDARD_LAMBDA)


@dataclass
class SweepRow:
    seed: int
    epsilon: float
    m: int
    achieved_norm: float
    predicted_gap: float
    measured_gap: float
    bound_value: float
    actual_param_change: float
    random_measured_gap: Optional[float]
    random_achieved_norm: Optional[float]


def gap_sweep(
    seed: int,
    factors: Sequence[float] = EPS_FACTORS,
    max_fraction: float = SWEEP_MAX_FRACTION,
    random_draws: int = 3,
    anneal: AnnealConfig = AnnealConfig(),
    ihvp: IhvpConfig = IhvpConfig(),
) -> list[SweepRow]:
    """Generalization-guaranteed masks over an epsilon grid, with random controls.

    For every epsilon the optimized mask is retrained and compared with
    ``random_draws`` random masks of the same size (their mean is reported).
    Random draws that would remove a whole class are skipped.
    """
    train, test = standard_split(seed)
    cfg = standard_train_config()
    params = fit_erm(train, cfg)
    S = influence_vectors(params, train, ihvp, grad_tol=cfg.grad_tol)
    scale = float(np.median(S.row_norms()))
    cap = int(max_fraction * train.n)
    rows = []
    for j, f in enumerate(factors):
        eps = f * scale
        rep = prune_generalization(S, eps, replace(anneal, seed=seed), max_selected=cap)
        gap = measure_gap(train, test, rep.mask, cfg, epsilon=eps, params=params, S=S)
        rand_gaps, rand_norms = [], []
        for r in range(random_draws if rep.m else 0):
            idx = stream(seed, "sweep-random", j, r).permutation(train.n)[: rep.m]
            try:
                g = measure_gap(train, test, PruneMask.from_indices(train.n, idx), cfg, params=params, S=S)
            except DataError:
                continue
            rand_gaps.append(g.measured_gap)
            rand_norms.append(g.achieved_norm)
        rows.append(
            SweepRow(
                seed=seed,
                epsilon=eps,
                m=rep.m,
                achieved_norm=gap.achieved_norm,
                predicted_gap=gap.predicted_gap,
                measured_gap=gap.measured_gap,
                bound_value=gap.bound_value,
                actual_param_change=gap.actual_param_change,
                random_measured_gap=float(np.mean(rand_gaps)) if rand_gaps else None,
                random_achieved_norm=float(np.mean(rand_norms)) if rand_norms else None,
            )
        )
    return rows


@dataclass
class RatioResult:
    seed: int
    ratio: float
    test_loss: dict = field(default_factory=dict)


def ratio_comparison(
    seed: int,
    ratios: Sequence[float] = PRUNE_RATIOS,
    methods: Sequence[str] = baselines.METHODS,
    sgd_epochs: int = 20,
    sgd_lr: float = 0.1,
    sgd_batch_size: int = 16,
    anneal: AnnealConfig = AnnealConfig(),
    ihvp: IhvpConfig = IhvpConfig(),
) -> list[RatioResult]:
    """Kept-set retrained test cross-entropy per method and prune ratio.

    ``"optimized"`` is the cardinality-guaranteed mask; the other keys are the
    score baselines. A method whose mask removes a class gets ``nan``.
    """
    train, test = standard_split(seed)
    cfg = standard_train_config()
    params = fit_erm(train, cfg)
    S = influence_vectors(params, train, ihvp, grad_tol=cfg.grad_tol)
    trace = None
    if "forgetting" in methods:
        _, trace = fit_sgd_traced(train, sgd_epochs, sgd_lr, sgd_batch_size, seed, cfg.reg_lambda)
    ctx = baselines.ScoringContext(dataset=train, params=params, trace=trace, influence=S, seed=seed, n=train.n)
    scores = {m: baselines.score(m, ctx) for m in methods}
    out = []
    for ratio in ratios:
        m = baselines.prune_count(train.n, ratio)
        masks = {"optimized": prune_cardinality(S, m, replace(anneal, seed=seed)).mask}
        for method in methods:
            masks[method] = baselines.select_keep(scores[method], train.n - m)
        res = RatioResult(seed=seed, ratio=ratio)
        for name, mask in masks.items():
            try:
                res.test_loss[name] = loss(retrain_without(train, mask, cfg), test)
            except DataError:
                res.test_loss[name] = float("nan")
        out.append(res)
    return out


def full_data_test_loss(seed: int) -> float:
    train, test = standard_split(seed)
    return loss(fit_erm(train, standard_train_config()), test)


__all__ = [
    "EPS_FACTORS",
    "PRUNE_RATIOS",
    "STANDARD_LAMBDA",
    "STANDARD_N",
    "SWEEP_MAX_FRACTION",
    "RatioResult",
    "SweepRow",
    "full_data_test_loss",
    "gap_sweep",
    "ratio_comparison",
    "standard_dataset",
    "standard_spec",
    "standard_split",
    "standard_train_config",
]
