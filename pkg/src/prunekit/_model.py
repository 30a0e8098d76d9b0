"""Multinomial-logistic kernels in the canonical flat parameter layout.

``theta`` is ``[W.ravel(), b]`` with ``W`` of shape ``(k, d)``. All functions
here are pure and vectorized over samples.
"""

from __future__ import annotations

import numpy as np


def unpack(theta: np.ndarray, k: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    return theta[: k * d].reshape(k, d), theta[k * d :]


def logits(theta: np.ndarray, X: np.ndarray, k: int) -> np.ndarray:
    W, b = unpack(theta, k, X.shape[1])
    return X @ W.T + b


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(theta: np.ndarray, X: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    """Per-sample cross-entropy, no regularizer."""
    ls = log_softmax(logits(theta, X, k))
    return -ls[np.arange(X.shape[0]), y]


def error_matrix(theta: np.ndarray, X: np.ndarray, y: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities ``P`` and errors ``P - onehot(y)``, both ``n x k``."""
    P = softmax(logits(theta, X, k))
    E = P.copy()
    E[np.arange(X.shape[0]), y] -= 1.0
    return P, E


def ce_gradients(theta: np.ndarray, X: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    """Per-sample cross-entropy gradients, ``n x N``."""
    n, d = X.shape
    _, E = error_matrix(theta, X, y, k)
    gw = (E[:, :, None] * X[:, None, :]).reshape(n, k * d)
    return np.concatenate([gw, E], axis=1)


def objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, k: int, lam: float) -> float:
    """Training objective: mean cross-entropy + (lam/2) * ||theta||^2."""
    return float(cross_entropy(theta, X, y, k).mean() + 0.5 * lam * theta @ theta)


def objective_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray, k: int, lam: float) -> np.ndarray:
    n = X.shape[0]
    _, E = error_matrix(theta, X, y, k)
    gw = E.T @ X / n
    gb = E.sum(axis=0) / n
    return np.concatenate([gw.ravel(), gb]) + lam * theta


def _flat_permutation(k: int, d: int) -> np.ndarray:
    """Map flat index -> index in the interleaved ``k x (d+1)`` layout."""
    q = np.arange(k * (d + 1))
    out = np.empty_like(q)
    w = q < k * d
    out[w] = (q[w] // d) * (d + 1) + q[w] % d
    out[~w] = (q[~w] - k * d) * (d + 1) + d
    return out


def hessian_data(theta: np.ndarray, X: np.ndarray, k: int) -> np.ndarray:
    """Dense ``(1/n) sum (diag(p) - p p^T) kron x~ x~^T`` in the flat layout."""
    n, d = X.shape
    P = softmax(logits(theta, X, k))
    D = -P[:, :, None] * P[:, None, :]
    D[:, np.arange(k), np.arange(k)] += P
    Xt = np.concatenate([X, np.ones((n, 1))], axis=1)
    H = np.einsum("ice,ia,ib->caeb", D, Xt, Xt, optimize=True).reshape(k * (d + 1), k * (d + 1)) / n
    perm = _flat_permutation(k, d)
    H = H[np.ix_(perm, perm)]
    return 0.5 * (H + H.T)


def hvp_data(theta: np.ndarray, v: np.ndarray, X: np.ndarray, k: int, P: np.ndarray | None = None) -> np.ndarray:
    """Matrix-free data-Hessian product with ``v`` (a vector or an ``N x r`` block)."""
    n, d = X.shape
    if P is None:
        P = softmax(logits(theta, X, k))
    if v.ndim == 1:
        return hvp_data(theta, v[:, None], X, k, P)[:, 0]
    r = v.shape[1]
    Vw = v[: k * d].reshape(k, d, r)
    vb = v[k * d :]
    U = np.einsum("ij,cjr->icr", X, Vw) + vb[None]
    Pr = P[:, :, None]
    DU = Pr * U - Pr * (Pr * U).sum(axis=1, keepdims=True)
    hw = np.einsum("icr,ij->cjr", DU, X).reshape(k * d, r) / n
    hb = DU.sum(axis=0) / n
    return np.concatenate([hw, hb], axis=0)
