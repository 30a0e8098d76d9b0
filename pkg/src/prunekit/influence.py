"""Per-sample parameter influence.

Row ``i`` of the influence set is ``(1/n) H^-1 grad L(z_i, theta_hat)``, the
first-order change of the minimizer when ``z_i`` is dropped. ``H`` is the
Hessian of the full training objective (data term plus ``lambda * I``) and
``L(z, theta)`` is the per-sample training loss ``CE(z, theta) +
(lambda/2)||theta||^2``, whose mean is the objective that :func:`fit_erm`
minimizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from . import _model
from .errors import ConfigError, ConvergenceError, SolverError
from .rng import stream
from .types import Dataset, InfluenceSet, ModelParams, PruneMask

logger = logging.getLogger(__name__)

DEFAULT_DENSE_CAP = 4096


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def per_sample_gradients(params: ModelParams, dataset: Dataset) -> np.ndarray:
    """All per-sample training-loss gradients, ``n x N``."""
    theta = params.flat
    G = _model.ce_gradients(theta, dataset.features, dataset.labels, params.k)
    return G + params.reg_lambda * theta


def per_sample_gradient(params: ModelParams, dataset: Dataset, i: int) -> np.ndarray:
    if not 0 <= i < dataset.n:
        raise IndexError(f"sample index {i} out of range for n={dataset.n}")
    theta = params.flat
    g = _model.ce_gradients(theta, dataset.features[i : i + 1], dataset.labels[i : i + 1], params.k)[0]
    return g + params.reg_lambda * theta


# ---------------------------------------------------------------------------
# Hessian
# ---------------------------------------------------------------------------


class HessianOperator:
    """The training-objective Hessian, either materialized or matrix-free."""

    def __init__(self, params: ModelParams, dataset: Dataset, reg_lambda: float, mode: str, dense=None):
        self.params = params
        self.dataset = dataset
        self.reg_lambda = float(reg_lambda)
        self.mode = mode
        self.N = params.N
        self.dense = dense
        self._probs = None
        self._chol = None

    def _p(self):
        if self._probs is None:
            self._probs = _model.softmax(_model.logits(self.params.flat, self.dataset.features, self.params.k))
        return self._probs

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if self.dense is not None:
            return self.dense @ v
        hv = _model.hvp_data(self.params.flat, v, self.dataset.features, self.params.k, self._p())
        return hv + self.reg_lambda * v

    __matmul__ = matvec

    def batch_matvec(self, v: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Hessian of the objective restricted to samples ``idx``, applied to ``v``."""
        X = self.dataset.features[idx]
        hv = _model.hvp_data(self.params.flat, v, X, self.params.k, self._p()[idx])
        return hv + self.reg_lambda * v

    def to_dense(self, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        if self.N > cap:
            raise ConfigError(f"N={self.N} exceeds the dense Hessian cap {cap}")
        H = _model.hessian_data(self.params.flat, self.dataset.features, self.params.k)
        H[np.diag_indices(self.N)] += self.reg_lambda
        return H

    def cholesky(self):
        if self._chol is None:
            try:
                self._chol = linalg.cho_factor(self.to_dense(), lower=True)
            except linalg.LinAlgError as exc:
                raise SolverError(f"Hessian is not positive definite: {exc}") from None
        return self._chol

    def check_positive_definite(self, rel_floor: float = 1e-10) -> tuple[bool, float]:
        """Cholesky success plus a smallest eigenvalue above ``rel_floor * max eig``.

        Returns the verdict and the smallest eigenvalue.
        """
        H = self.to_dense()
        eig = np.linalg.eigvalsh(H)
        try:
            linalg.cholesky(H, lower=True)
            chol_ok = True
        except linalg.LinAlgError:
            chol_ok = False
        ok = chol_ok and eig[0] > rel_floor * max(eig[-1], 1.0) and eig[0] >= self.reg_lambda - 1e-8
        return bool(ok), float(eig[0])


def build_hessian(
    params: ModelParams,
    dataset: Dataset,
    reg_lambda: Optional[float] = None,
    mode: str = "dense",
    dense_cap: int = DEFAULT_DENSE_CAP,
) -> HessianOperator:
    lam = params.reg_lambda if reg_lambda is None else reg_lambda
    if mode not in ("dense", "implicit"):
        raise ConfigError(f"unknown Hessian mode {mode!r}")
    if mode == "dense":
        if params.N > dense_cap:
            raise ConfigError(f"N={params.N} exceeds the dense Hessian cap {dense_cap}; use mode='implicit'")
        H = _model.hessian_data(params.flat, dataset.features, params.k)
        H[np.diag_indices(params.N)] += lam
        return HessianOperator(params, dataset, lam, mode, dense=H)
    return HessianOperator(params, dataset, lam, mode)


# ---------------------------------------------------------------------------
# inverse Hessian-vector products
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IhvpConfig:
    """Solver choice for ``H^-1 v``.

    ``method='auto'`` picks Cholesky when the Hessian can be materialized and
    CG otherwise. ``lissa_scale=None`` sets the scale to 1.1x a power-iteration
    estimate of the largest eigenvalue. ``lissa_batch_size=None`` uses the full
    dataset for every Hessian-vector product in the series.
    """

    method: str = "auto"
    cg_tol: float = 1e-10
    cg_max_iters: Optional[int] = None
    lissa_depth: int = 1000
    lissa_samples: int = 4
    lissa_scale: Optional[float] = None
    lissa_batch_size: Optional[int] = None
    lissa_damping: float = 0.0
    seed: int = 0

    def check(self) -> None:
        if self.method not in ("auto", "cholesky", "cg", "lissa"):
            raise ConfigError(f"unknown inverse-HVP method {self.method!r}")
        if not self.cg_tol > 0:
            raise ConfigError("cg_tol must be > 0")
        if self.lissa_depth < 1 or self.lissa_samples < 1:
            raise ConfigError("lissa_depth and lissa_samples must be >= 1")
        if self.lissa_scale is not None and not self.lissa_scale > 0:
            raise ConfigError("lissa_scale must be > 0")


def conjugate_gradient(
    apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = 1e-10,
    max_iters: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, int, float]:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Stops when ``||b - A x|| <= tol * ||b||``. Returns the solution, the
    iteration count and the final relative residual; raises
    :class:`ConvergenceError` if ``max_iters`` (default ``10 * len(b)``) runs out.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    if max_iters is None:
        max_iters = 10 * b.size
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - apply(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = float(r @ r)
    for it in range(1, max_iters + 1):
        Ap = apply(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise ConvergenceError(f"CG met non-positive curvature {pAp:.3e} at iteration {it}")
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= tol * bnorm:
            # recompute the true residual; the recurrence drifts
            true_res = float(np.linalg.norm(b - apply(x))) / bnorm
            if true_res <= tol:
                return x, it, true_res
            r = b - apply(x)
            rr_new = float(r @ r)
            p = r.copy()
            rr = rr_new
            continue
        p = r + (rr_new / rr) * p
        rr = rr_new
    res = float(np.linalg.norm(b - apply(x))) / bnorm
    raise ConvergenceError(f"CG did not reach tol {tol:.1e} in {max_iters} iterations (residual {res:.3e})", res)


def power_iteration(apply: Callable[[np.ndarray], np.ndarray], N: int, iters: int = 200, seed: int = 0) -> float:
    """Largest eigenvalue estimate of a symmetric PSD operator."""
    v = stream(seed, "power-iteration").standard_normal(N)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply(v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= 1e-10 * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return lam


def lissa_scale_for(hessian: HessianOperator, cfg: IhvpConfig) -> float:
    lam_max = power_iteration(hessian.matvec, hessian.N, seed=cfg.seed)
    if cfg.lissa_scale is None:
        return 1.1 * lam_max
    if cfg.lissa_scale <= lam_max:
        raise ConfigError(
            f"lissa_scale {cfg.lissa_scale:g} does not exceed the estimated largest Hessian "
            f"eigenvalue {lam_max:g}; the series would diverge"
        )
    return float(cfg.lissa_scale)


def _lissa(hessian: HessianOperator, V: np.ndarray, cfg: IhvpConfig) -> np.ndarray:
    """Truncated stochastic Neumann series for ``H^-1 V`` (columns of ``V``).

    ``u <- v + (1 - damping) u - H_batch u / scale`` repeated ``lissa_depth``
    times, divided by ``scale`` and averaged over ``lissa_samples`` runs.
    """
    scale = lissa_scale_for(hessian, cfg)
    n = hessian.dataset.n
    batch = cfg.lissa_batch_size
    vnorm = np.linalg.norm(V)
    total = np.zeros_like(V)
    for s in range(cfg.lissa_samples):
        rng = stream(cfg.seed, "lissa", s)
        u = V.copy()
        for j in range(cfg.lissa_depth):
            if batch is None or batch >= n:
                hu = hessian.matvec(u)
            else:
                hu = _batch_apply(hessian, u, rng.choice(n, size=batch, replace=False))
            u = V + (1.0 - cfg.lissa_damping) * u - hu / scale
            if j % 64 == 0 and np.linalg.norm(u) > 1e6 * max(vnorm, 1e-300):
                raise SolverError(f"LiSSA diverged at depth {j} (scale {scale:g} too small)")
        if not np.all(np.isfinite(u)) or np.linalg.norm(u) > 1e6 * max(vnorm, 1e-300):
            raise SolverError(f"LiSSA diverged (scale {scale:g} too small)")
        total += u / scale
    return total / cfg.lissa_samples


def _batch_apply(hessian: HessianOperator, u: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return hessian.batch_matvec(u, idx)


def _resolve_method(hessian: HessianOperator, cfg: IhvpConfig, dense_cap: int) -> str:
    if cfg.method != "auto":
        return cfg.method
    return "cholesky" if hessian.N <= dense_cap else "cg"


def inverse_hvp(hessian: HessianOperator, v, cfg: IhvpConfig = IhvpConfig(), dense_cap: int = DEFAULT_DENSE_CAP):
    """Solve ``H u = v``. ``v`` may be a vector or an ``N x r`` block of right-hand sides.

    Cholesky factors once per operator and reuses the factor; CG solves each
    column separately to ``cg_tol`` relative residual; LiSSA returns the
    truncated-series estimate.
    """
    cfg.check()
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("right-hand side contains non-finite values")
    if v.shape[0] != hessian.N:
        raise ValueError(f"right-hand side has leading dimension {v.shape[0]}, expected N={hessian.N}")
    method = _resolve_method(hessian, cfg, dense_cap)
    if method == "cholesky":
        u = linalg.cho_solve(hessian.cholesky(), v)
        res = np.linalg.norm(hessian.matvec(u) - v, axis=0)
        scale = np.linalg.norm(v, axis=0)
        bad = res > cfg.cg_tol * np.maximum(scale, 1e-300)
        if np.any(bad & (scale > 0)):
            # one round of iterative refinement for ill-conditioned factors
            u = u + linalg.cho_solve(hessian.cholesky(), v - hessian.matvec(u))
        return u
    if method == "cg":
        if v.ndim == 1:
            return conjugate_gradient(hessian.matvec, v, cfg.cg_tol, cfg.cg_max_iters)[0]
        cols = [conjugate_gradient(hessian.matvec, col, cfg.cg_tol, cfg.cg_max_iters)[0] for col in v.T]
        return np.stack(cols, axis=1)
    return _lissa(hessian, v, cfg)


# ---------------------------------------------------------------------------
# influence set
# ---------------------------------------------------------------------------


def influence_vectors(
    params: ModelParams,
    dataset: Dataset,
    cfg: IhvpConfig = IhvpConfig(),
    grad_tol: float = 1e-9,
    hessian: Optional[HessianOperator] = None,
) -> InfluenceSet:
    """Row ``i`` = ``(1/n) H^-1 grad L(z_i, theta_hat)``.

    ``params`` must minimize the training objective on ``dataset``; a gradient
    norm above ``10 * grad_tol`` is rejected.
    """
    g = _model.objective_grad(params.flat, dataset.features, dataset.labels, params.k, params.reg_lambda)
    gnorm = float(np.linalg.norm(g))
    if gnorm > 10 * grad_tol:
        raise SolverError(f"params are not the training minimizer: ||grad||={gnorm:.3e} > {10 * grad_tol:.1e}")
    if hessian is None:
        mode = "dense" if params.N <= DEFAULT_DENSE_CAP else "implicit"
        hessian = build_hessian(params, dataset, mode=mode)
    G = per_sample_gradients(params, dataset)
    U = inverse_hvp(hessian, G.T, cfg)
    return InfluenceSet(U.T / dataset.n)


def group_influence(S: InfluenceSet, mask: PruneMask) -> tuple[np.ndarray, float]:
    """Summed influence of the pruned rows and its Euclidean norm."""
    if mask.n != S.n:
        raise ValueError(f"mask has length {mask.n}, influence set has n={S.n}")
    vec = S.vectors[mask.bits].sum(axis=0) if mask.selected_count else np.zeros(S.N)
    return vec, float(np.linalg.norm(vec))
