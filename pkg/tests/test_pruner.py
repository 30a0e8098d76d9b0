import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prunekit.errors import ConfigError
from prunekit.influence import group_influence
from prunekit.pruner import (
    AnnealConfig,
    RunningNorm,
    exhaustive_prune,
    incremental_norm_update,
    prune_cardinality,
    prune_generalization,
)
from prunekit.types import InfluenceSet, PruneMask

FAST = AnnealConfig(iterations=20_000, restarts=2)
TRIANGLE = InfluenceSet(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]))


def _random_set(seed, n=12, N=4):
    return InfluenceSet(np.random.default_rng(seed).standard_normal((n, N)))


# exhaustive oracle ------------------------------------------------------------


def test_exhaustive_triangle_cancels():
    rep = exhaustive_prune(TRIANGLE, epsilon=0.01)
    assert rep.mask.indices.tolist() == [0, 1, 2]
    assert rep.achieved_norm <= 1e-15


def test_exhaustive_triangle_tie_break():
    rep = exhaustive_prune(TRIANGLE, m=2)
    assert rep.mask.indices.tolist() == [0, 2]
    assert rep.achieved_norm == pytest.approx(1.0, abs=1e-15)


def test_exhaustive_infinite_epsilon_takes_everything():
    assert exhaustive_prune(_random_set(0), epsilon=math.inf).m == 12


def test_exhaustive_zero_epsilon_takes_nothing():
    assert exhaustive_prune(_random_set(1), epsilon=0.0).m == 0


def test_exhaustive_cap_and_arguments():
    with pytest.raises(ConfigError):
        exhaustive_prune(_random_set(0, n=21), epsilon=1.0)
    with pytest.raises(ConfigError):
        exhaustive_prune(TRIANGLE)
    with pytest.raises(ConfigError):
        exhaustive_prune(TRIANGLE, epsilon=1.0, m=1)


@given(st.integers(0, 2**16), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
@settings(max_examples=25)
def test_exhaustive_monotone_in_epsilon(seed, e1, e2):
    S = _random_set(seed, n=8, N=3)
    lo, hi = sorted((e1, e2))
    assert exhaustive_prune(S, epsilon=lo).m <= exhaustive_prune(S, epsilon=hi).m


# generalization mode ------------------------------------------------------------


def test_generalization_whole_set_when_epsilon_covers_it():
    S = _random_set(2)
    eps = float(np.linalg.norm(S.vectors.sum(axis=0))) + 1e-9
    assert prune_generalization(S, eps, FAST).m == S.n


def test_generalization_zero_epsilon():
    rep = prune_generalization(_random_set(3), 0.0, FAST)
    assert rep.m == 0 and rep.feasible


@given(st.integers(0, 2**16), st.floats(0.05, 4.0))
@settings(max_examples=20)
def test_generalization_is_always_feasible(seed, eps):
    S = _random_set(seed, n=20, N=3)
    rep = prune_generalization(S, eps, AnnealConfig(iterations=5_000, restarts=1, seed=seed))
    # from scratch, not from the running sum
    assert np.linalg.norm(S.vectors[rep.mask.bits].sum(axis=0)) <= eps
    assert rep.feasible and rep.achieved_norm == pytest.approx(group_influence(S, rep.mask)[1], rel=1e-12, abs=1e-15)


def test_generalization_never_worse_than_warm_start():
    for seed in range(5):
        rep = prune_generalization(_random_set(seed, n=30), 1.0, replace(FAST, seed=seed))
        assert rep.m >= rep.extras["warm_start_m"]


def test_generalization_respects_cap():
    S = InfluenceSet(np.vstack([np.eye(3), -np.eye(3)]))
    assert prune_generalization(S, 1e-9, FAST).m == 6
    rep = prune_generalization(S, 1e-9, FAST, max_selected=4)
    assert rep.m == 4 and rep.achieved_norm <= 1e-9
    with pytest.raises(ConfigError):
        prune_generalization(S, 1e-9, FAST, max_selected=7)


def test_generalization_is_deterministic():
    S = _random_set(4, n=40)
    cfg = replace(FAST, seed=11)
    a, b = prune_generalization(S, 1.0, cfg), prune_generalization(S, 1.0, cfg)
    assert a.mask == b.mask and a.objective_trace == b.objective_trace


def test_generalization_rejects_negative_epsilon():
    with pytest.raises(ConfigError):
        prune_generalization(TRIANGLE, -1.0)


def test_generalization_matches_exhaustive_on_small_instances():
    hits = sum(
        prune_generalization(S, eps, AnnealConfig(seed=seed)).m == exhaustive_prune(S, epsilon=eps).m
        for seed in range(10)
        for S, eps in [(_random_set(seed), 0.5 * float(_random_set(seed).row_norms().mean()))]
    )
    assert hits >= 9


# cardinality mode -------------------------------------------------------------


def test_cardinality_edges():
    S = _random_set(5)
    empty = prune_cardinality(S, 0, FAST)
    assert empty.m == 0 and empty.achieved_norm == 0
    full = prune_cardinality(S, S.n, FAST)
    assert full.m == S.n
    assert full.achieved_norm == pytest.approx(np.linalg.norm(S.vectors.sum(axis=0)), rel=1e-12)
    with pytest.raises(ConfigError):
        prune_cardinality(S, S.n + 1, FAST)


@given(st.integers(0, 2**16), st.integers(1, 11))
@settings(max_examples=20)
def test_cardinality_keeps_exact_size(seed, m):
    rep = prune_cardinality(_random_set(seed), m, AnnealConfig(iterations=2_000, restarts=1, seed=seed))
    assert rep.m == m


def test_cardinality_never_worse_than_warm_start():
    for seed in range(5):
        rep = prune_cardinality(_random_set(seed, n=30), 10, replace(FAST, seed=seed))
        assert rep.achieved_norm <= rep.extras["warm_start_norm"]


def test_cardinality_matches_exhaustive_on_small_instances():
    hits = 0
    for seed in range(10):
        S = _random_set(seed)
        sa = prune_cardinality(S, 6, AnnealConfig(seed=seed)).achieved_norm
        hits += abs(sa - exhaustive_prune(S, m=6).achieved_norm) <= 1e-9
    assert hits >= 9


def test_cardinality_is_deterministic():
    S = _random_set(6, n=40)
    cfg = replace(FAST, seed=2)
    assert prune_cardinality(S, 15, cfg).mask == prune_cardinality(S, 15, cfg).mask


def test_threads_do_not_change_the_answer():
    S = _random_set(7, n=40)
    one = prune_cardinality(S, 15, replace(FAST, restarts=4, threads=1))
    many = prune_cardinality(S, 15, replace(FAST, restarts=4, threads=4))
    assert one.mask == many.mask


def test_anneal_config_validation():
    for bad in (AnnealConfig(iterations=0), AnnealConfig(restarts=0), AnnealConfig(t_initial=1.0, t_final=2.0)):
        with pytest.raises(ConfigError):
            bad.check()


# incremental norm -------------------------------------------------------------


def test_flip_then_unflip_restores_norm():
    S = _random_set(8)
    state = RunningNorm(S, np.random.default_rng(0).random(S.n) < 0.5)
    before = state.norm
    incremental_norm_update(state, 3)
    assert abs(incremental_norm_update(state, 3) - before) <= 1e-12 * max(before, 1.0)


def test_single_flip_from_empty_is_the_row_norm():
    S = _random_set(9)
    assert incremental_norm_update(RunningNorm(S), 4) == pytest.approx(S.row_norms()[4], rel=1e-14)


def test_drift_over_many_flips():
    S = _random_set(10, n=50, N=8)
    state = RunningNorm(S)
    flips = np.random.default_rng(1).integers(0, S.n, 100_000)
    worst = 0.0
    for j, i in enumerate(flips):
        norm = incremental_norm_update(state, int(i))
        if j % 1000 == 999:
            exact = float(np.linalg.norm(S.vectors[state.bits].sum(axis=0)))
            worst = max(worst, abs(norm - exact) / max(exact, 1e-12))
    exact = float(np.linalg.norm(S.vectors[state.bits].sum(axis=0)))
    worst = max(worst, abs(state.norm - exact) / max(exact, 1e-12))
    assert worst <= 1e-9


def test_running_norm_matches_mask():
    S = _random_set(11)
    mask = PruneMask.from_indices(S.n, [1, 4, 7])
    assert RunningNorm(S, mask.bits).norm == pytest.approx(group_influence(S, mask)[1], rel=1e-14)
