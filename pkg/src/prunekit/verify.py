"""Self-check suite behind ``prunekit verify``.

Each check returns a :class:`CheckResult`; nothing here raises on a failed
check, so a broken configuration (for example ``lambda = 0``) is reported as
FAIL lines instead of a traceback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import _model
from .benchmark import STANDARD_LAMBDA, standard_split
from .errors import PrunekitError
from .influence import (
    IhvpConfig,
    build_hessian,
    conjugate_gradient,
    influence_vectors,
    inverse_hvp,
    per_sample_gradients,
)
from .oracle import correlation, heldout_gradient, loo_sweep, measure_gap
from .pruner import AnnealConfig, exhaustive_prune, prune_cardinality, prune_generalization
from .rng import stream
from .trainer import TrainConfig, fit_erm
from .types import InfluenceSet, ModelParams

FD_STEP = 1e-5
FD_TOL = 1e-5
IHVP_TOL = 1e-10
LISSA_TOL = 0.05
LOO_PEARSON = 0.95
LOO_COSINE = 0.9
LOO_FRACTION = 0.9


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def check_gradient(train, lam: float, seed: int = 0) -> CheckResult:
    """Analytic objective gradient against central differences at a random point."""
    k, d = train.k, train.d
    theta = stream(seed, "verify-point").standard_normal(k * (d + 1))
    X, y = train.features, train.labels
    fd = np.empty_like(theta)
    for q in range(theta.size):
        e = np.zeros_like(theta)
        e[q] = FD_STEP
        fd[q] = (_model.objective(theta + e, X, y, k, lam) - _model.objective(theta - e, X, y, k, lam)) / (2 * FD_STEP)
    err = _rel(_model.objective_grad(theta, X, y, k, lam), fd)
    return CheckResult("gradient-fd", err <= FD_TOL, f"relative error {err:.2e} (tol {FD_TOL:g})")


def check_hvp(train, lam: float, seed: int = 0) -> CheckResult:
    """Hessian-vector products against differences of the gradient."""
    k, d = train.k, train.d
    rng = stream(seed, "verify-hvp")
    theta = rng.standard_normal(k * (d + 1))
    X, y = train.features, train.labels
    worst = 0.0
    for _ in range(3):
        v = rng.standard_normal(theta.size)
        fd = (_model.objective_grad(theta + FD_STEP * v, X, y, k, lam)
              - _model.objective_grad(theta - FD_STEP * v, X, y, k, lam)) / (2 * FD_STEP)
        hv = _model.hvp_data(theta, v, X, k) + lam * v
        worst = max(worst, _rel(hv, fd))
    return CheckResult("hvp-fd", worst <= FD_TOL, f"worst relative error {worst:.2e} (tol {FD_TOL:g})")


def check_positive_definite(params: ModelParams, train) -> CheckResult:
    ok, min_eig = build_hessian(params, train).check_positive_definite()
    return CheckResult("hessian-pd", ok, f"smallest eigenvalue {min_eig:.3e} (lambda {params.reg_lambda:g})")


def check_ihvp(params: ModelParams, train) -> list[CheckResult]:
    """Residual contract for Cholesky and CG; LiSSA against Cholesky."""
    H = build_hessian(params, train)
    G = per_sample_gradients(params, train).T
    out = []
    U_chol = inverse_hvp(H, G, IhvpConfig(method="cholesky", cg_tol=IHVP_TOL))
    res = np.linalg.norm(H.matvec(U_chol) - G, axis=0) / np.maximum(np.linalg.norm(G, axis=0), 1e-300)
    out.append(CheckResult("ihvp-cholesky", float(res.max()) <= IHVP_TOL, f"max relative residual {res.max():.2e}"))
    worst = 0.0
    for col in G.T[:20]:
        _, _, relres = conjugate_gradient(H.matvec, col, IHVP_TOL, None)
        worst = max(worst, relres)
    out.append(CheckResult("ihvp-cg", worst <= IHVP_TOL, f"max relative residual {worst:.2e} over 20 right-hand sides"))
    U_lissa = inverse_hvp(H, G, IhvpConfig(method="lissa"))
    err = _rel(U_lissa, U_chol)
    out.append(CheckResult("ihvp-lissa", err <= LISSA_TOL, f"relative error vs cholesky {err:.2e} (tol {LISSA_TOL:g})"))
    return out


def check_loo(params: ModelParams, train, S: InfluenceSet, cfg: TrainConfig, limit: Optional[int] = None) -> CheckResult:
    idx = None if limit is None else np.arange(min(limit, train.n))
    sweep = loo_sweep(train, params, S, cfg, idx)
    r = correlation(sweep["predicted_norm"], sweep["actual_norm"])
    frac = float(np.mean(sweep["cosine"] >= LOO_COSINE))
    ok = r >= LOO_PEARSON and frac >= LOO_FRACTION
    return CheckResult(
        "loo-fidelity",
        ok,
        f"pearson {r:.4f} (>= {LOO_PEARSON}), cosine >= {LOO_COSINE} for {frac:.1%} of {sweep['index'].size} samples",
    )


def sa_instance(seed: int, n: int = 12, N: int = 4) -> tuple[InfluenceSet, float, int]:
    """A random small instance: Gaussian rows, epsilon half the mean row norm, m = n/2."""
    rows = stream(seed, "verify-sa-instance").standard_normal((n, N))
    eps = 0.5 * float(np.linalg.norm(rows, axis=1).mean())
    return InfluenceSet(rows), eps, n // 2


def check_sa(instances: int, anneal: AnnealConfig = AnnealConfig()) -> list[CheckResult]:
    need = math.ceil(0.95 * instances)
    hits_gen = hits_card = 0
    for seed in range(instances):
        S, eps, m = sa_instance(seed)
        cfg = replace(anneal, seed=seed)
        hits_gen += prune_generalization(S, eps, cfg).m == exhaustive_prune(S, epsilon=eps).m
        sa_norm = prune_cardinality(S, m, cfg).achieved_norm
        hits_card += abs(sa_norm - exhaustive_prune(S, m=m).achieved_norm) <= 1e-9
    return [
        CheckResult("sa-generalization", hits_gen >= need, f"matched exhaustive size on {hits_gen}/{instances} (need {need})"),
        CheckResult("sa-cardinality", hits_card >= need, f"matched exhaustive norm on {hits_card}/{instances} (need {need})"),
    ]


def check_bounds(params, train, test, S: InfluenceSet, cfg: TrainConfig, factors=(1.0, 2.0, 4.0)) -> CheckResult:
    """Feasibility of generalization-guaranteed masks and the Cauchy-Schwarz gap bound.

    Parameter changes beyond three times epsilon are counted and reported but
    do not fail the check.
    """
    scale = float(np.median(S.row_norms()))
    g_norm = float(np.linalg.norm(heldout_gradient(params, test)))
    ok = True
    over = 0
    parts = []
    for f in factors:
        eps = f * scale
        rep = prune_generalization(S, eps, AnnealConfig(iterations=50_000, restarts=2), max_selected=train.n // 4)
        gap = measure_gap(train, test, rep.mask, cfg, epsilon=eps, params=params, S=S)
        ok &= rep.achieved_norm <= eps and gap.predicted_gap <= g_norm * gap.achieved_norm * (1 + 1e-12)
        over += gap.param_change_violation
        parts.append(f"eps={eps:.2e} m={rep.m}")
    return CheckResult("bounds", bool(ok), f"{', '.join(parts)}; param change > 3 eps in {over}/{len(factors)}")


def run_checks(
    quick: bool = False,
    reg_lambda: float = STANDARD_LAMBDA,
    seed: int = 0,
    report: Callable[[CheckResult], None] = lambda r: None,
) -> list[CheckResult]:
    """Run the suite on the standard benchmark; ``report`` sees each result as it lands."""
    results: list[CheckResult] = []

    def add(items):
        for r in items if isinstance(items, list) else [items]:
            results.append(r)
            report(r)

    def guarded(name: str, fn):
        try:
            add(fn())
        except (PrunekitError, np.linalg.LinAlgError, ValueError) as exc:
            add(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))

    train, test = standard_split(seed)
    cfg = TrainConfig(reg_lambda=reg_lambda)
    guarded("gradient-fd", lambda: check_gradient(train, reg_lambda, seed))
    guarded("hvp-fd", lambda: check_hvp(train, reg_lambda, seed))

    params = None
    try:
        params = fit_erm(train, cfg)
    except PrunekitError as exc:
        add(CheckResult("fit", False, f"{type(exc).__name__}: {exc}"))
    # without a fitted model the curvature is still checked at the origin
    at = params if params is not None else ModelParams.zeros(train.k, train.d, reg_lambda)
    guarded("hessian-pd", lambda: check_positive_definite(at, train))
    if params is None:
        return results

    guarded("ihvp", lambda: check_ihvp(params, train))
    S = None
    try:
        S = influence_vectors(params, train, grad_tol=cfg.grad_tol)
    except PrunekitError as exc:
        add(CheckResult("influence", False, f"{type(exc).__name__}: {exc}"))
    if S is not None:
        guarded("loo-fidelity", lambda: check_loo(params, train, S, cfg, limit=40 if quick else None))
        guarded("bounds", lambda: check_bounds(params, train, test, S, cfg))
    guarded("sa", lambda: check_sa(5 if quick else 20))
    return results
