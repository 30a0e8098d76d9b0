"""Shared domain types.

All arrays are copied and frozen (``writeable = False``) on construction so the
objects can be shared read-only between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Dataset",
    "ModelParams",
    "InfluenceSet",
    "PruneMask",
    "PruneReport",
    "validate",
]


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense embeddings with integer class labels.

    ``k`` defaults to ``1 + max(labels)`` when not given.
    """

    features: np.ndarray
    labels: np.ndarray
    k: int = 0

    def __post_init__(self):
        feats = _frozen(self.features, np.float64)
        if feats.ndim == 1:
            feats = _frozen(feats.reshape(-1, 1), np.float64)
        labels = _frozen(self.labels, np.int64).reshape(-1)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        if not self.k:
            k = int(labels.max()) + 1 if labels.size else 0
            object.__setattr__(self, "k", k)

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], k=self.k)

    def without(self, mask: "PruneMask") -> "Dataset":
        """The kept complement of a pruned mask."""
        return self.subset(mask.kept_indices)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def validate(dataset: Dataset, require_all_classes: bool = False) -> list[str]:
    """Check the dataset invariants and return one message per violation.

    Never raises. Messages name the offending sample index (and column for
    non-finite features).
    """
    problems: list[str] = []
    if dataset.features.ndim != 2:
        return [f"features must be a 2-d array, got {dataset.features.ndim}-d"]
    n, d = dataset.features.shape
    if n < 1:
        problems.append("dataset has no samples (n must be >= 1)")
    if d < 1:
        problems.append("feature dimension must be >= 1")
    if dataset.k < 2:
        problems.append(f"class count k={dataset.k} must be >= 2")
    if dataset.labels.shape != (n,):
        problems.append(f"labels have shape {dataset.labels.shape}, expected ({n},)")
        return problems
    for i in np.flatnonzero((dataset.labels < 0) | (dataset.labels >= dataset.k)):
        problems.append(f"sample {i}: label {dataset.labels[i]} outside [0, {dataset.k})")
    rows, cols = np.nonzero(~np.isfinite(dataset.features))
    for i, j in zip(rows, cols):
        problems.append(f"sample {i}, feature {j}: non-finite value {dataset.features[i, j]}")
    if require_all_classes and not problems:
        counts = dataset.class_counts()
        for c in np.flatnonzero(counts == 0):
            problems.append(f"class {c} has no samples")
    return problems


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Multinomial logistic weights.

    The canonical flat layout is the row-major ``k x d`` weight matrix followed
    by the ``k`` biases; every length-N vector in the package uses it.
    """

    weights: np.ndarray
    bias: np.ndarray
    reg_lambda: float

    def __post_init__(self):
        w = _frozen(self.weights, np.float64)
        b = _frozen(self.bias, np.float64).reshape(-1)
        if w.ndim != 2 or w.shape[0] != b.shape[0]:
            raise ValueError(f"weights {w.shape} and bias {b.shape} disagree")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("parameters contain non-finite values")
        if not float(self.reg_lambda) >= 0:
            raise ValueError(f"reg_lambda must be nonnegative, got {self.reg_lambda}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "reg_lambda", float(self.reg_lambda))

    @property
    def k(self) -> int:
        return int(self.weights.shape[0])

    @property
    def d(self) -> int:
        return int(self.weights.shape[1])

    @property
    def N(self) -> int:
        return self.k * (self.d + 1)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def from_flat(cls, theta, k: int, d: int, reg_lambda: float) -> "ModelParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (k * (d + 1),):
            raise ValueError(f"flat vector has shape {theta.shape}, expected ({k * (d + 1)},)")
        return cls(theta[: k * d].reshape(k, d), theta[k * d :], reg_lambda)

    @classmethod
    def zeros(cls, k: int, d: int, reg_lambda: float) -> "ModelParams":
        return cls(np.zeros((k, d)), np.zeros(k), reg_lambda)


@dataclass(frozen=True, eq=False)
class InfluenceSet:
    """Row ``i`` is the predicted parameter change from removing sample ``i``."""

    vectors: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vectors, np.float64)
        if v.ndim != 2:
            raise ValueError("influence vectors must be an n x N matrix")
        object.__setattr__(self, "vectors", v)

    @property
    def n(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def N(self) -> int:
        return int(self.vectors.shape[1])

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)


@dataclass(frozen=True, eq=False)
class PruneMask:
    """Binary vector over the dataset; ones mark the pruned (removed) samples."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", _frozen(np.asarray(self.bits).reshape(-1), bool))

    @property
    def n(self) -> int:
        return int(self.bits.shape[0])

    @property
    def selected_count(self) -> int:
        return int(self.bits.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    @property
    def kept_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.bits)

    @classmethod
    def from_indices(cls, n: int, indices: Sequence[int]) -> "PruneMask":
        bits = np.zeros(n, dtype=bool)
        bits[np.asarray(list(indices), dtype=np.int64)] = True
        return cls(bits)

    @classmethod
    def empty(cls, n: int) -> "PruneMask":
        return cls(np.zeros(n, dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, PruneMask):
            return NotImplemented
        return bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash(self.bits.tobytes())


@dataclass
class PruneReport:
    mask: PruneMask
    achieved_norm: float
    epsilon: Optional[float]
    objective_trace: list[tuple[int, float]] = field(default_factory=list)
    seed: int = 0
    feasible: bool = True
    predicted_gap: Optional[float] = None
    measured_gap: Optional[float] = None
    mode: str = "generalization"
    n_train: Optional[int] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.achieved_norm < 0:
            raise ValueError("achieved_norm must be nonnegative")

    @property
    def m(self) -> int:
        return self.mask.selected_count
