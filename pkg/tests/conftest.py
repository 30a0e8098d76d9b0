import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from prunekit.benchmark import standard_train_config
from prunekit.data_io import SyntheticSpec, make_synthetic
from prunekit.influence import influence_vectors
from prunekit.trainer import TrainConfig, fit_erm

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_dataset():
    """60 samples, 3 well-separated classes in 4 dimensions."""
    return make_synthetic(SyntheticSpec(n_per_class=20, k=3, d=4, class_separation=4.0, noise_sigma=1.0, seed=11))


@pytest.fixture(scope="session")
def small_fit(small_dataset):
    cfg = TrainConfig(reg_lambda=1e-2)
    params = fit_erm(small_dataset, cfg)
    return params, influence_vectors(params, small_dataset, grad_tol=cfg.grad_tol), cfg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def standard_cfg():
    return standard_train_config()
