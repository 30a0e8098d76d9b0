"""Fit the L2-regularized multinomial logistic surrogate.

:func:`fit_erm` is a damped Newton method started at zero (or at a seeded
random point), :func:`fit_sgd_traced` is plain mini-batch SGD that records
which samples are classified correctly after every epoch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from . import _model
from .errors import ConfigError, ConvergenceError, DataError, SolverError
from .rng import stream
from .types import Dataset, ModelParams, validate

logger = logging.getLogger(__name__)

DEFAULT_REG_LAMBDA = 1e-3
DENSE_NEWTON_CAP = 4096


@dataclass(frozen=True)
class TrainConfig:
    """Newton solver settings.

    ``seed=None`` starts from the zero vector; an integer seed starts from a
    small Gaussian point drawn from that seed (the minimizer is unique, so this
    only changes the path).
    """

    reg_lambda: float = DEFAULT_REG_LAMBDA
    grad_tol: float = 1e-9
    max_newton_iters: int = 100
    seed: Optional[int] = None

    def check(self) -> None:
        if not self.reg_lambda > 0:
            raise ConfigError(f"reg_lambda must be > 0, got {self.reg_lambda}")
        if not self.grad_tol > 0:
            raise ConfigError(f"grad_tol must be > 0, got {self.grad_tol}")
        if self.max_newton_iters < 1:
            raise ConfigError("max_newton_iters must be >= 1")


@dataclass(frozen=True)
class SgdTrace:
    correct: np.ndarray  # epochs x n booleans
    learning_rate: float
    batch_size: int
    seed: int

    @property
    def epochs(self) -> int:
        return int(self.correct.shape[0])


def _check_dims(params: ModelParams, features: np.ndarray) -> None:
    if features.ndim != 2 or features.shape[1] != params.d:
        raise ValueError(f"features have shape {features.shape}, params expect d={params.d}")


def predict_proba(params: ModelParams, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    _check_dims(params, X)
    return _model.softmax(_model.logits(params.flat, X, params.k))


def per_sample_loss(params: ModelParams, dataset: Dataset) -> np.ndarray:
    """Cross-entropy of each sample; the regularizer is not included."""
    _check_dims(params, dataset.features)
    if dataset.k > params.k:
        raise ValueError(f"dataset has k={dataset.k} classes, params only {params.k}")
    return _model.cross_entropy(params.flat, dataset.features, dataset.labels, params.k)


def loss(params: ModelParams, dataset: Dataset) -> float:
    return float(per_sample_loss(params, dataset).mean())


def accuracy(params: ModelParams, dataset: Dataset) -> float:
    pred = np.argmax(predict_proba(params, dataset.features), axis=1)
    return float(np.mean(pred == dataset.labels))


def training_objective(params: ModelParams, dataset: Dataset) -> float:
    return _model.objective(params.flat, dataset.features, dataset.labels, params.k, params.reg_lambda)


def objective_gradient(params: ModelParams, dataset: Dataset) -> np.ndarray:
    """Gradient of mean cross-entropy + (lambda/2)||theta||^2."""
    return _model.objective_grad(params.flat, dataset.features, dataset.labels, params.k, params.reg_lambda)


def _require_classes(dataset: Dataset) -> None:
    problems = validate(dataset, require_all_classes=True)
    if problems:
        raise DataError("cannot train: " + "; ".join(problems[:5]))


def _newton_direction(theta, g, X, k, lam) -> np.ndarray:
    N = theta.size
    if N <= DENSE_NEWTON_CAP:
        H = _model.hessian_data(theta, X, k)
        H[np.diag_indices(N)] += lam
        return -linalg.cho_solve(linalg.cho_factor(H, lower=True), g)
    from .influence import conjugate_gradient

    P = _model.softmax(_model.logits(theta, X, k))
    op = lambda v: _model.hvp_data(theta, v, X, k, P) + lam * v  # noqa: E731
    return -conjugate_gradient(op, g, tol=1e-10, max_iters=10 * N)[0]


def fit_erm(dataset: Dataset, cfg: TrainConfig = TrainConfig()) -> ModelParams:
    """Minimize the regularized training objective to ``||grad|| <= grad_tol``.

    Newton steps with Cholesky solves and Armijo backtracking. Once the
    tolerance is met one extra Newton step is taken if it lowers the gradient
    norm further, which puts the result at machine precision in practice.
    """
    cfg.check()
    _require_classes(dataset)
    X, y, k, lam = dataset.features, dataset.labels, dataset.k, cfg.reg_lambda
    N = k * (dataset.d + 1)
    if cfg.seed is None:
        theta = np.zeros(N)
    else:
        theta = 0.01 * stream(cfg.seed, "trainer-init").standard_normal(N)

    f = _model.objective(theta, X, y, k, lam)
    g = _model.objective_grad(theta, X, y, k, lam)
    gnorm = float(np.linalg.norm(g))
    for it in range(cfg.max_newton_iters):
        if gnorm <= cfg.grad_tol:
            break
        step = _newton_direction(theta, g, X, k, lam)
        slope = float(g @ step)
        t = 1.0
        for _ in range(60):
            cand = theta + t * step
            f_c = _model.objective(cand, X, y, k, lam)
            if f_c <= f + 1e-4 * t * slope:
                break
            # near the optimum f is flat to rounding; fall back to the gradient norm
            if f_c <= f + 1e-14 * max(1.0, abs(f)):
                g_c = _model.objective_grad(cand, X, y, k, lam)
                if np.linalg.norm(g_c) < gnorm:
                    break
            t *= 0.5
        else:
            raise ConvergenceError(f"line search failed at Newton iteration {it}, ||grad||={gnorm:.3e}", gnorm)
        theta, f = cand, f_c
        g = _model.objective_grad(theta, X, y, k, lam)
        gnorm = float(np.linalg.norm(g))
        logger.debug("newton %d: f=%.12g |g|=%.3e t=%g", it, f, gnorm, t)
    else:
        if gnorm > cfg.grad_tol:
            raise ConvergenceError(
                f"Newton did not converge in {cfg.max_newton_iters} iterations: ||grad||={gnorm:.3e}", gnorm
            )

    polished = theta + _newton_direction(theta, g, X, k, lam)
    g_p = _model.objective_grad(polished, X, y, k, lam)
    if np.linalg.norm(g_p) < gnorm:
        theta = polished
    return ModelParams.from_flat(theta, k, dataset.d, lam)


def fit_sgd_traced(
    dataset: Dataset,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    reg_lambda: float = DEFAULT_REG_LAMBDA,
) -> tuple[ModelParams, SgdTrace]:
    """Mini-batch SGD from zero on the regularized objective.

    Row ``e`` of the trace marks the samples classified correctly after epoch
    ``e``. The shuffle order is drawn from the ``sgd`` stream of ``seed``.
    """
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if not 1 <= batch_size <= dataset.n:
        raise ConfigError(f"batch_size must be in [1, n={dataset.n}]")
    if lr < 0:
        raise ConfigError("learning rate must be nonnegative")
    _require_classes(dataset)
    X, y, k = dataset.features, dataset.labels, dataset.k
    rng = stream(seed, "sgd")
    theta = np.zeros(k * (dataset.d + 1))
    correct = np.zeros((epochs, dataset.n), dtype=bool)
    for epoch in range(epochs):
        order = rng.permutation(dataset.n)
        # overflow is detected below and reported as divergence
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, dataset.n, batch_size):
                idx = order[start : start + batch_size]
                theta = theta - lr * _model.objective_grad(theta, X[idx], y[idx], k, reg_lambda)
            obj = _model.objective(theta, X, y, k, reg_lambda)
        if not np.isfinite(obj) or not np.all(np.isfinite(theta)):
            raise SolverError(f"SGD diverged in epoch {epoch}: objective {obj}")
        pred = np.argmax(_model.logits(theta, X, k), axis=1)
        correct[epoch] = pred == y
    params = ModelParams.from_flat(theta, k, dataset.d, reg_lambda)
    return params, SgdTrace(correct, float(lr), int(batch_size), int(seed))
