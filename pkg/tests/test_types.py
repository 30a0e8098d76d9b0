import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prunekit.types import Dataset, InfluenceSet, ModelParams, PruneMask, PruneReport, validate


def test_validate_well_formed():
    ds = Dataset(np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, -1.0]]), np.array([0, 1, 0, 1]), k=2)
    assert validate(ds) == []


def test_validate_label_out_of_range_names_index():
    ds = Dataset(np.zeros((3, 2)), np.array([0, 5, 1]), k=3)
    problems = validate(ds)
    assert len(problems) == 1
    assert "1" in problems[0] and "5" in problems[0]


def test_validate_nan_names_row_and_column():
    X = np.zeros((3, 2))
    X[2, 1] = np.nan
    problems = validate(Dataset(X, np.array([0, 1, 0]), k=2))
    assert len(problems) == 1
    assert "2" in problems[0] and "1" in problems[0]


def test_validate_missing_class_only_when_required():
    ds = Dataset(np.zeros((2, 1)), np.array([0, 0]), k=3)
    assert validate(ds) == []
    assert validate(ds, require_all_classes=True)


def test_dataset_k_defaults_to_max_label_plus_one():
    assert Dataset(np.zeros((3, 1)), np.array([0, 2, 1])).k == 3


def test_dataset_is_read_only():
    ds = Dataset(np.zeros((2, 2)), np.array([0, 1]))
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_dataset_without_keeps_complement():
    ds = Dataset(np.arange(8.0).reshape(4, 2), np.array([0, 1, 0, 1]))
    kept = ds.without(PruneMask.from_indices(4, [1, 2]))
    np.testing.assert_array_equal(kept.labels, [0, 1])
    np.testing.assert_array_equal(kept.features, [[0, 1], [6, 7]])


def test_model_params_flat_layout():
    W = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    b = np.array([7.0, 8.0, 9.0])
    p = ModelParams(W, b, 0.1)
    assert p.N == 9
    np.testing.assert_array_equal(p.flat, [1, 2, 3, 4, 5, 6, 7, 8, 9])
    q = ModelParams.from_flat(p.flat, 3, 2, 0.1)
    np.testing.assert_array_equal(q.weights, W)
    np.testing.assert_array_equal(q.bias, b)


def test_model_params_rejects_non_finite():
    with pytest.raises(ValueError):
        ModelParams(np.array([[np.inf]]), np.zeros(1), 0.1)


def test_influence_set_row_norms():
    S = InfluenceSet(np.array([[3.0, 4.0], [0.0, 0.0]]))
    np.testing.assert_allclose(S.row_norms(), [5.0, 0.0])


@given(st.lists(st.booleans(), min_size=0, max_size=40))
def test_mask_count_matches_bits(bits):
    mask = PruneMask(np.array(bits, dtype=bool))
    assert mask.selected_count == sum(bits)
    assert mask.n == len(bits)
    np.testing.assert_array_equal(np.sort(np.concatenate([mask.indices, mask.kept_indices])), np.arange(len(bits)))


def test_mask_equality_and_hash():
    a = PruneMask.from_indices(5, [0, 3])
    b = PruneMask.from_indices(5, [3, 0])
    assert a == b and hash(a) == hash(b)
    assert a != PruneMask.from_indices(5, [0])


def test_report_rejects_negative_norm():
    with pytest.raises(ValueError):
        PruneReport(mask=PruneMask.empty(2), achieved_norm=-1.0, epsilon=None)
