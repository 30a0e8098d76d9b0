"""Subset selection over influence rows.

Two problems over a binary mask ``W``:

* generalization-guaranteed: maximize ``sum(W)`` s.t. ``||W^T S||_2 <= epsilon``
* cardinality-guaranteed: minimize ``||W^T S||_2`` s.t. ``sum(W) = m``

Both are solved by simulated annealing (best of several chains) from a greedy
warm start. :func:`exhaustive_prune` enumerates all masks for ``n <= 20`` and
serves as the ground truth in tests.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numba
import numpy as np

from .errors import ConfigError
from .rng import stream
from .types import InfluenceSet, PruneMask, PruneReport

logger = logging.getLogger(__name__)

EXHAUSTIVE_CAP = 20
_CALIBRATION_MOVES = 100
_TARGET_ACCEPTANCE = 0.8
_TRACE_POINTS = 200


@dataclass(frozen=True)
class AnnealConfig:
    """Annealing schedule.

    ``t_initial=None`` calibrates the start temperature so that about 80% of
    100 random moves from the warm start would be accepted. ``t_final=None``
    means ``t_initial * 1e-4``. Cooling is geometric over ``iterations`` steps.
    ``penalty_rho=None`` picks ``4 / mean nonzero row norm``.
    """

    iterations: int = 200_000
    t_initial: Optional[float] = None
    t_final: Optional[float] = None
    penalty_rho: Optional[float] = None
    seed: int = 0
    restarts: int = 5
    threads: int = 1

    def check(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.t_initial is not None and not self.t_initial > 0:
            raise ConfigError("t_initial must be > 0")
        if self.t_final is not None and not self.t_final > 0:
            raise ConfigError("t_final must be > 0")
        if self.t_initial is not None and self.t_final is not None and not self.t_initial > self.t_final:
            raise ConfigError("t_initial must exceed t_final")
        if self.penalty_rho is not None and not self.penalty_rho > 0:
            raise ConfigError("penalty_rho must be > 0")

    def cooling(self, t0: float, t1: float) -> float:
        return (t1 / t0) ** (1.0 / self.iterations)


class RunningNorm:
    """Running sum ``u = W^T S`` with O(N) bit flips.

    The squared norm is carried alongside ``u`` and updated with
    ``||u +- s||^2 = ||u||^2 +- 2<u, s> + ||s||^2``.
    """

    def __init__(self, S: InfluenceSet, bits=None):
        self.S = S.vectors
        self.bits = np.zeros(S.n, dtype=bool) if bits is None else np.array(bits, dtype=bool)
        self.u = self.S[self.bits].sum(axis=0) if self.bits.any() else np.zeros(S.N)
        self.sq = float(self.u @ self.u)
        self._row_sq = np.einsum("ij,ij->i", self.S, self.S)

    @property
    def norm(self) -> float:
        return math.sqrt(max(self.sq, 0.0))

    def flip(self, i: int) -> float:
        s = self.S[i]
        sign = -1.0 if self.bits[i] else 1.0
        self.sq = self.sq + 2.0 * sign * float(self.u @ s) + self._row_sq[i]
        self.u = self.u + sign * s
        self.bits[i] = not self.bits[i]
        return self.norm


def incremental_norm_update(state: RunningNorm, flip_index: int) -> float:
    return state.flip(flip_index)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _anneal_generalization(S, row_sq, bits, eps, rho, max_m, t0, alpha, flips, uniforms, trace_every):
    n, N = S.shape
    u = np.zeros(N)
    m = 0
    for i in range(n):
        if bits[i]:
            m += 1
            for q in range(N):
                u[q] += S[i, q]
    sq = 0.0
    for q in range(N):
        sq += u[q] * u[q]
    norm = math.sqrt(max(sq, 0.0))
    energy = -m + rho * max(0.0, norm - eps)
    best = bits.copy()
    best_m = m if norm <= eps else -1
    T = t0
    iters = flips.shape[0]
    n_trace = iters // trace_every + 1
    trace_it = np.empty(n_trace, dtype=np.int64)
    trace_e = np.empty(n_trace)
    k = 0
    for t in range(iters):
        if t % trace_every == 0:
            trace_it[k] = t
            trace_e[k] = energy
            k += 1
        i = flips[t]
        sign = -1.0 if bits[i] else 1.0
        if sign > 0 and m >= max_m:
            T *= alpha
            continue
        dot = 0.0
        for q in range(N):
            dot += u[q] * S[i, q]
        new_sq = sq + 2.0 * sign * dot + row_sq[i]
        new_norm = math.sqrt(max(new_sq, 0.0))
        new_energy = -(m + sign) + rho * max(0.0, new_norm - eps)
        delta = new_energy - energy
        if delta <= 0.0 or uniforms[t] < math.exp(-delta / T):
            for q in range(N):
                u[q] += sign * S[i, q]
            bits[i] = not bits[i]
            m += int(sign)
            sq = new_sq
            norm = new_norm
            energy = new_energy
            if (t & 1023) == 0:
                sq = 0.0
                for q in range(N):
                    sq += u[q] * u[q]
                norm = math.sqrt(sq)
                energy = -m + rho * max(0.0, norm - eps)
            if norm <= eps and m > best_m:
                best_m = m
                best[:] = bits
        T *= alpha
    return best, trace_it[:k], trace_e[:k]


@numba.njit(cache=True, nogil=True)
def _anneal_cardinality(S, sel, unsel, t0, alpha, pick_a, pick_b, uniforms, trace_every):
    n, N = S.shape
    m = sel.shape[0]
    r = unsel.shape[0]
    u = np.zeros(N)
    for a in range(m):
        for q in range(N):
            u[q] += S[sel[a], q]
    sq = 0.0
    for q in range(N):
        sq += u[q] * u[q]
    norm = math.sqrt(max(sq, 0.0))
    best_sel = sel.copy()
    best_norm = norm
    T = t0
    iters = uniforms.shape[0]
    n_trace = iters // trace_every + 1
    trace_it = np.empty(n_trace, dtype=np.int64)
    trace_e = np.empty(n_trace)
    k = 0
    diff = np.empty(N)
    for t in range(iters):
        if t % trace_every == 0:
            trace_it[k] = t
            trace_e[k] = norm
            k += 1
        a = min(int(pick_a[t] * m), m - 1)
        b = min(int(pick_b[t] * r), r - 1)
        i = sel[a]
        j = unsel[b]
        dot = 0.0
        dd = 0.0
        for q in range(N):
            diff[q] = S[j, q] - S[i, q]
            dot += u[q] * diff[q]
            dd += diff[q] * diff[q]
        new_sq = sq + 2.0 * dot + dd
        new_norm = math.sqrt(max(new_sq, 0.0))
        delta = new_norm - norm
        if delta <= 0.0 or uniforms[t] < math.exp(-delta / T):
            for q in range(N):
                u[q] += diff[q]
            sel[a] = j
            unsel[b] = i
            sq = new_sq
            if (t & 1023) == 0:
                sq = 0.0
                for q in range(N):
                    sq += u[q] * u[q]
            norm = math.sqrt(max(sq, 0.0))
            if norm < best_norm:
                best_norm = norm
                best_sel[:] = sel
        T *= alpha
    return best_sel, trace_it[:k], trace_e[:k]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _norm_of(S: np.ndarray, bits: np.ndarray) -> float:
    if not bits.any():
        return 0.0
    return float(np.linalg.norm(S[bits].sum(axis=0)))


def _lex_key(bits: np.ndarray) -> tuple:
    return tuple(np.flatnonzero(bits).tolist())


def _default_rho(S: np.ndarray) -> float:
    norms = np.linalg.norm(S, axis=1)
    nz = norms[norms > 0]
    return 4.0 / float(nz.mean()) if nz.size else 1.0


def _greedy_feasible(S: np.ndarray, eps: float, max_m: int) -> np.ndarray:
    """Add rows in increasing norm order whenever the constraint still holds."""
    order = np.argsort(np.linalg.norm(S, axis=1), kind="stable")
    bits = np.zeros(S.shape[0], dtype=bool)
    u = np.zeros(S.shape[1])
    for i in order:
        if bits.sum() >= max_m:
            break
        cand = u + S[i]
        if np.linalg.norm(cand) <= eps:
            u = cand
            bits[i] = True
    return bits


def _repair(S: np.ndarray, bits: np.ndarray, eps: float, max_m: int) -> np.ndarray:
    """Drop the sample whose removal shrinks the norm most until feasible, then
    add back any sample that keeps the constraint (smallest resulting norm first).
    Norms are always recomputed from scratch."""
    bits = bits.copy()
    u = S[bits].sum(axis=0) if bits.any() else np.zeros(S.shape[1])
    while bits.any() and np.linalg.norm(u) > eps:
        sel = np.flatnonzero(bits)
        cand = np.linalg.norm(u[None, :] - S[sel], axis=1)
        i = sel[int(np.argmin(cand))]
        bits[i] = False
        u = S[bits].sum(axis=0) if bits.any() else np.zeros(S.shape[1])
    while bits.sum() < max_m:
        free = np.flatnonzero(~bits)
        if free.size == 0:
            break
        cand = np.linalg.norm(u[None, :] + S[free], axis=1)
        ok = cand <= eps
        if not ok.any():
            break
        j = free[ok][int(np.argmin(cand[ok]))]
        trial = bits.copy()
        trial[j] = True
        u_trial = S[trial].sum(axis=0)
        if np.linalg.norm(u_trial) > eps:
            break
        bits, u = trial, u_trial
    return bits


def _calibrate_t0(deltas: np.ndarray) -> float:
    pos = deltas[deltas > 0]
    if pos.size == 0:
        return 1.0
    return float(-pos.mean() / math.log(_TARGET_ACCEPTANCE))


def _run_chains(fn, cfg: AnnealConfig):
    if cfg.threads > 1 and cfg.restarts > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(fn, range(cfg.restarts)))
    return [fn(r) for r in range(cfg.restarts)]


# ---------------------------------------------------------------------------
# public solvers
# ---------------------------------------------------------------------------


def prune_generalization(
    S: InfluenceSet, epsilon: float, cfg: AnnealConfig = AnnealConfig(), max_selected: Optional[int] = None
) -> PruneReport:
    """Largest mask whose summed influence has norm at most ``epsilon``.

    Annealing runs on ``-sum(W) + rho * max(0, ||W^T S|| - epsilon)`` with
    single-bit flips; each chain remembers its best feasible state, which is
    then repaired/extended with from-scratch norms. The returned mask always
    satisfies the constraint.

    At an exact minimizer the rows sum to zero, so the full mask (and the
    complement of any feasible mask) is feasible too. ``max_selected`` caps the
    number of pruned samples to keep the answer inside the regime where the
    first-order estimate means something.
    """
    cfg.check()
    if not epsilon >= 0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    Sv = S.vectors
    n = S.n
    max_m = n if max_selected is None else int(max_selected)
    if not 0 <= max_m <= n:
        raise ConfigError(f"max_selected={max_selected} outside [0, {n}]")
    warm = _greedy_feasible(Sv, epsilon, max_m)
    warm_m = int(warm.sum())
    rho = cfg.penalty_rho if cfg.penalty_rho is not None else _default_rho(Sv)
    row_sq = np.einsum("ij,ij->i", Sv, Sv)

    # temperature calibration: energy deltas of random flips from the warm start
    u0 = Sv[warm].sum(axis=0) if warm_m else np.zeros(S.N)
    e0 = -warm_m + rho * max(0.0, float(np.linalg.norm(u0)) - epsilon)
    probe = stream(cfg.seed, "anneal-calibrate").integers(0, n, _CALIBRATION_MOVES)
    sign = np.where(warm[probe], -1.0, 1.0)
    new_norm = np.linalg.norm(u0[None, :] + sign[:, None] * Sv[probe], axis=1)
    deltas = (-(warm_m + sign) + rho * np.maximum(0.0, new_norm - epsilon)) - e0
    t0 = cfg.t_initial if cfg.t_initial is not None else _calibrate_t0(deltas)
    t1 = cfg.t_final if cfg.t_final is not None else t0 * 1e-4
    if not t0 > t1:
        raise ConfigError("t_initial must exceed t_final")
    alpha = cfg.cooling(t0, t1)
    trace_every = max(1, cfg.iterations // _TRACE_POINTS)

    def chain(r: int):
        rng = stream(cfg.seed, "anneal", r)
        flips = rng.integers(0, n, cfg.iterations)
        uniforms = rng.random(cfg.iterations)
        best, t_it, t_e = _anneal_generalization(
            Sv, row_sq, warm.copy(), float(epsilon), float(rho), max_m, float(t0), float(alpha), flips, uniforms,
            trace_every,
        )
        bits = _repair(Sv, best, epsilon, max_m)
        return bits, list(zip(t_it.tolist(), t_e.tolist()))

    results = _run_chains(chain, cfg) if n > 0 else [(warm, [])]
    candidates = [(warm, [])] + results
    best_bits, best_trace = min(candidates, key=lambda c: (-int(c[0].sum()), _lex_key(c[0])))
    if best_trace == [] and len(results):
        best_trace = results[0][1]
    norm = _norm_of(Sv, best_bits)
    if norm > epsilon:  # pragma: no cover - repair guarantees feasibility
        raise AssertionError("repaired mask violates the constraint")
    return PruneReport(
        mask=PruneMask(best_bits),
        achieved_norm=norm,
        epsilon=float(epsilon),
        objective_trace=best_trace,
        seed=cfg.seed,
        feasible=True,
        mode="generalization",
        n_train=n,
        extras={
            "solver": "anneal",
            "warm_start_m": warm_m,
            "penalty_rho": rho,
            "t_initial": t0,
            "t_final": t1,
            "iterations": cfg.iterations,
            "restarts": cfg.restarts,
            "chain_sizes": [int(b.sum()) for b, _ in results],
            "max_selected": max_m,
        },
    )


def _smallest_rows(S: np.ndarray, m: int) -> np.ndarray:
    order = np.argsort(np.linalg.norm(S, axis=1), kind="stable")
    bits = np.zeros(S.shape[0], dtype=bool)
    bits[order[:m]] = True
    return bits


def prune_cardinality(S: InfluenceSet, m: int, cfg: AnnealConfig = AnnealConfig()) -> PruneReport:
    """Mask of exactly ``m`` samples with the smallest summed-influence norm.

    Swap moves keep the cardinality fixed; the warm start is the ``m``
    smallest-norm rows.
    """
    cfg.check()
    n = S.n
    if not 0 <= m <= n:
        raise ConfigError(f"m={m} outside [0, {n}]")
    Sv = S.vectors
    warm = _smallest_rows(Sv, m)
    base = dict(epsilon=None, seed=cfg.seed, feasible=True, mode="cardinality", n_train=n)
    if m == 0 or m == n:
        return PruneReport(
            mask=PruneMask(warm), achieved_norm=_norm_of(Sv, warm), objective_trace=[], extras={"solver": "forced"}, **base
        )

    sel0 = np.flatnonzero(warm)
    unsel0 = np.flatnonzero(~warm)
    u0 = Sv[sel0].sum(axis=0)
    norm0 = float(np.linalg.norm(u0))
    rng_c = stream(cfg.seed, "anneal-calibrate")
    a = sel0[rng_c.integers(0, m, _CALIBRATION_MOVES)]
    b = unsel0[rng_c.integers(0, n - m, _CALIBRATION_MOVES)]
    deltas = np.linalg.norm(u0[None, :] - Sv[a] + Sv[b], axis=1) - norm0
    t0 = cfg.t_initial if cfg.t_initial is not None else _calibrate_t0(deltas)
    t1 = cfg.t_final if cfg.t_final is not None else t0 * 1e-4
    if not t0 > t1:
        raise ConfigError("t_initial must exceed t_final")
    alpha = cfg.cooling(t0, t1)
    trace_every = max(1, cfg.iterations // _TRACE_POINTS)

    def chain(r: int):
        rng = stream(cfg.seed, "anneal", r)
        pick_a = rng.random(cfg.iterations)
        pick_b = rng.random(cfg.iterations)
        uniforms = rng.random(cfg.iterations)
        best_sel, t_it, t_e = _anneal_cardinality(
            Sv, sel0.copy(), unsel0.copy(), float(t0), float(alpha), pick_a, pick_b, uniforms, trace_every
        )
        bits = np.zeros(n, dtype=bool)
        bits[best_sel] = True
        return bits, list(zip(t_it.tolist(), t_e.tolist()))

    results = _run_chains(chain, cfg)
    scored = [(_norm_of(Sv, b), _lex_key(b), b, tr) for b, tr in [(warm, [])] + results]
    norm, _, best_bits, best_trace = min(scored, key=lambda c: (c[0], c[1]))
    if not best_trace:
        best_trace = results[0][1]
    return PruneReport(
        mask=PruneMask(best_bits),
        achieved_norm=norm,
        objective_trace=best_trace,
        extras={
            "solver": "anneal",
            "warm_start_norm": _norm_of(Sv, warm),
            "t_initial": t0,
            "t_final": t1,
            "iterations": cfg.iterations,
            "restarts": cfg.restarts,
            "chain_norms": [c[0] for c in scored[1:]],
        },
        **base,
    )


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------

_CHUNK = 1 << 15


def exhaustive_prune(S: InfluenceSet, epsilon: Optional[float] = None, m: Optional[int] = None) -> PruneReport:
    """Exact optimum by enumeration (``n <= 20``).

    Pass exactly one of ``epsilon`` (largest feasible mask) or ``m`` (smallest
    norm at fixed size). Ties go to the lexicographically smallest sorted index
    set.
    """
    if (epsilon is None) == (m is None):
        raise ConfigError("pass exactly one of epsilon or m")
    n = S.n
    if n > EXHAUSTIVE_CAP:
        raise ConfigError(f"exhaustive enumeration is capped at n={EXHAUSTIVE_CAP}, got n={n}")
    Sv = S.vectors
    if m is not None:
        return _exhaustive_cardinality(Sv, m)
    if not epsilon >= 0:
        raise ConfigError("epsilon must be >= 0")
    # bit (n-1-i) of the code selects sample i, so among equal-size sets the
    # lexicographically smallest index set has the largest code
    weights = 1 << (n - 1 - np.arange(n, dtype=np.int64))
    best_m, best_code = 0, 0
    for start in range(0, 1 << n, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, 1 << n), dtype=np.int64)
        masks = (codes[:, None] & weights[None, :]) != 0
        norms = np.linalg.norm(masks.astype(np.float64) @ Sv, axis=1)
        feasible = norms <= epsilon
        if not feasible.any():
            continue
        sizes = np.where(feasible, masks.sum(axis=1), -1)
        top = int(sizes.max())
        code = int(codes[sizes == top].max())
        if top > best_m or (top == best_m and code > best_code):
            best_m, best_code = top, code
    bits = (best_code & weights) != 0
    # confirm with the same from-scratch norm used everywhere else
    norm = _norm_of(Sv, bits)
    return PruneReport(
        mask=PruneMask(bits),
        achieved_norm=norm,
        epsilon=float(epsilon),
        feasible=norm <= epsilon,
        mode="generalization",
        n_train=n,
        extras={"solver": "exhaustive"},
    )


def _exhaustive_cardinality(Sv: np.ndarray, m: int) -> PruneReport:
    n = Sv.shape[0]
    if not 0 <= m <= n:
        raise ConfigError(f"m={m} outside [0, {n}]")
    best_norm, best_combo = math.inf, ()
    combos = itertools.combinations(range(n), m)
    while True:
        block = list(itertools.islice(combos, _CHUNK))
        if not block:
            break
        idx = np.array(block, dtype=np.int64).reshape(len(block), m)
        sums = Sv[idx].sum(axis=1) if m else np.zeros((len(block), Sv.shape[1]))
        norms = np.linalg.norm(sums, axis=1)
        j = int(np.argmin(norms))  # first minimum = lexicographically smallest in this block
        if norms[j] < best_norm:
            best_norm, best_combo = float(norms[j]), block[j]
    bits = np.zeros(n, dtype=bool)
    bits[list(best_combo)] = True
    return PruneReport(
        mask=PruneMask(bits),
        achieved_norm=_norm_of(Sv, bits),
        epsilon=None,
        mode="cardinality",
        n_train=n,
        extras={"solver": "exhaustive"},
    )


def with_seed(cfg: AnnealConfig, seed: int) -> AnnealConfig:
    return replace(cfg, seed=seed)
