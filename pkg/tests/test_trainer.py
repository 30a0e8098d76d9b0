import math

import numpy as np
import pytest

from prunekit import _model
from prunekit.data_io import SyntheticSpec, make_synthetic
from prunekit.errors import ConfigError, DataError, SolverError
from prunekit.trainer import (
    TrainConfig,
    accuracy,
    fit_erm,
    fit_sgd_traced,
    loss,
    objective_gradient,
    per_sample_loss,
    predict_proba,
    training_objective,
)
from prunekit.types import Dataset, ModelParams


def test_zero_params_give_ln2():
    ds = Dataset(np.random.default_rng(0).standard_normal((5, 3)), np.array([0, 1, 0, 1, 1]), k=2)
    np.testing.assert_allclose(per_sample_loss(ModelParams.zeros(2, 3, 0.1), ds), math.log(2), rtol=0, atol=1e-15)


def test_probability_rows_sum_to_one(rng):
    params = ModelParams(5 * rng.standard_normal((4, 3)), rng.standard_normal(4), 0.1)
    P = predict_proba(params, 10 * rng.standard_normal((50, 3)))
    np.testing.assert_allclose(P.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all(P >= 0)


def test_loss_is_mean_of_per_sample(small_dataset, small_fit):
    params = small_fit[0]
    assert abs(loss(params, small_dataset) - per_sample_loss(params, small_dataset).mean()) <= 1e-12


def test_loss_excludes_regularizer(small_dataset, small_fit):
    params = small_fit[0]
    reg = 0.5 * params.reg_lambda * float(params.flat @ params.flat)
    assert training_objective(params, small_dataset) == pytest.approx(loss(params, small_dataset) + reg, rel=1e-12)


def test_dimension_mismatch(small_fit):
    with pytest.raises(ValueError):
        predict_proba(small_fit[0], np.zeros((2, 7)))


def test_gradient_matches_finite_differences(small_dataset):
    X, y, k = small_dataset.features, small_dataset.labels, small_dataset.k
    rng = np.random.default_rng(5)
    h = 1e-5
    for _ in range(20):
        theta = rng.standard_normal(k * (small_dataset.d + 1))
        fd = np.array(
            [
                (_model.objective(theta + h * e, X, y, k, 0.01) - _model.objective(theta - h * e, X, y, k, 0.01)) / (2 * h)
                for e in np.eye(theta.size)
            ]
        )
        g = _model.objective_grad(theta, X, y, k, 0.01)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_fit_meets_gradient_tolerance(small_dataset, small_fit):
    params, _, cfg = small_fit
    assert np.linalg.norm(objective_gradient(params, small_dataset)) <= cfg.grad_tol


def test_fit_is_a_minimum(small_dataset, small_fit):
    params = small_fit[0]
    f0 = training_objective(params, small_dataset)
    rng = np.random.default_rng(9)
    for _ in range(10):
        v = rng.standard_normal(params.N)
        moved = ModelParams.from_flat(params.flat + 1e-2 * v / np.linalg.norm(v), params.k, params.d, params.reg_lambda)
        assert training_objective(moved, small_dataset) >= f0


def test_fit_is_independent_of_initialization(small_dataset):
    a = fit_erm(small_dataset, TrainConfig(reg_lambda=1e-2, seed=1))
    b = fit_erm(small_dataset, TrainConfig(reg_lambda=1e-2, seed=2))
    assert np.linalg.norm(a.flat - b.flat) <= 10 * 1e-9


def test_fit_is_bit_deterministic(small_dataset):
    a = fit_erm(small_dataset, TrainConfig(reg_lambda=1e-2))
    b = fit_erm(small_dataset, TrainConfig(reg_lambda=1e-2))
    assert np.array_equal(a.flat, b.flat)


def test_separable_two_class_reaches_full_accuracy():
    ds = make_synthetic(SyntheticSpec(n_per_class=30, k=2, d=2, class_separation=8.0, noise_sigma=0.5, seed=3))
    assert accuracy(fit_erm(ds, TrainConfig(reg_lambda=1e-2)), ds) == 1.0


def test_random_labels_give_near_uniform_probabilities():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((4000, 3))
    ds = Dataset(X, np.tile([0, 1], 2000), k=2)
    params = fit_erm(ds, TrainConfig(reg_lambda=1e-1))
    assert np.linalg.norm(params.flat) < 0.1
    np.testing.assert_allclose(predict_proba(params, X), 0.5, atol=0.1)


def test_missing_class_is_rejected():
    ds = Dataset(np.zeros((3, 2)), np.array([0, 0, 0]), k=2)
    with pytest.raises(DataError, match="class"):
        fit_erm(ds)


def test_nonpositive_lambda_is_rejected(small_dataset):
    with pytest.raises(ConfigError):
        fit_erm(small_dataset, TrainConfig(reg_lambda=0.0))


def test_non_convergence_reports(small_dataset):
    with pytest.raises(SolverError):
        fit_erm(small_dataset, TrainConfig(reg_lambda=1e-2, max_newton_iters=1, grad_tol=1e-30))


def test_sgd_single_epoch_shape(small_dataset):
    _, trace = fit_sgd_traced(small_dataset, 1, 0.1, 8, seed=0)
    assert trace.correct.shape == (1, small_dataset.n)


def test_sgd_zero_learning_rate_is_a_no_op(small_dataset):
    params, trace = fit_sgd_traced(small_dataset, 4, 0.0, 8, seed=0)
    assert np.all(params.flat == 0)
    assert np.all(trace.correct == trace.correct[0])


def test_sgd_is_deterministic(small_dataset):
    a, ta = fit_sgd_traced(small_dataset, 3, 0.1, 8, seed=2)
    b, tb = fit_sgd_traced(small_dataset, 3, 0.1, 8, seed=2)
    assert np.array_equal(a.flat, b.flat) and np.array_equal(ta.correct, tb.correct)


def test_sgd_approaches_erm_accuracy():
    ds = make_synthetic(SyntheticSpec(n_per_class=50, k=3, d=4, class_separation=5.0, seed=6))
    erm = accuracy(fit_erm(ds, TrainConfig(reg_lambda=1e-2)), ds)
    sgd, _ = fit_sgd_traced(ds, 30, 0.1, 16, seed=0, reg_lambda=1e-2)
    assert abs(accuracy(sgd, ds) - erm) <= 0.02


def test_sgd_divergence_names_epoch(small_dataset):
    with pytest.raises(SolverError, match="epoch 0"):
        fit_sgd_traced(small_dataset, 3, 1e300, 8, seed=0)


def test_sgd_rejects_bad_arguments(small_dataset):
    with pytest.raises(ConfigError):
        fit_sgd_traced(small_dataset, 0, 0.1, 8, seed=0)
    with pytest.raises(ConfigError):
        fit_sgd_traced(small_dataset, 1, 0.1, small_dataset.n + 1, seed=0)
