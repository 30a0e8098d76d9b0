"""Dataset, mask, influence and report files; synthetic benchmark datasets.

Binary dataset layout (little-endian)::

    magic   4s   b"DPRN"
    version u32  1
    n       u64
    d       u32
    k       u32
    labels  n * u32
    features n * d * f32, row-major

Features are stored as 32-bit floats and widened to float64 on load.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .rng import stream
from .types import Dataset, InfluenceSet, PruneMask, PruneReport, validate

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"DPRN"
INFLUENCE_MAGIC = b"DPIS"
FORMAT_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sIQII")
_INFLUENCE_HEADER = struct.Struct("<4sIQI")

MASK_SEMANTICS = "pruned"


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def _infer_format(path: Path, fmt: Optional[str]) -> str:
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "binary"
    if fmt not in ("binary", "csv"):
        raise ConfigError(f"unknown dataset format {fmt!r} (expected 'binary' or 'csv')")
    return fmt


def load_dataset(path, format: Optional[str] = None) -> Dataset:
    """Read a dataset in the binary or CSV format and validate it.

    The format is inferred from the file suffix when not given (``.csv`` means
    CSV, anything else binary).
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    dataset = _read_binary(path) if fmt == "binary" else _read_csv(path)
    problems = validate(dataset)
    if problems:
        raise DataError(f"{path}: " + "; ".join(problems[:10]))
    return dataset


def _read_binary(path: Path) -> Dataset:
    raw = path.read_bytes()
    hsize = _DATASET_HEADER.size
    if len(raw) < hsize:
        raise DataError(f"{path}: malformed header: file has {len(raw)} bytes, header needs {hsize}")
    magic, version, n, d, k = _DATASET_HEADER.unpack_from(raw, 0)
    if magic != DATASET_MAGIC:
        raise DataError(f"{path}: malformed header at byte 0: magic {magic!r} != {DATASET_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: malformed header at byte 4: unsupported version {version}")
    expected = n * 4 + n * d * 4
    payload = len(raw) - hsize
    if payload != expected:
        raise DataError(
            f"{path}: payload is {payload} bytes after offset {hsize}, expected {expected} "
            f"(truncated or trailing data at byte {hsize + min(payload, expected)})"
        )
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=hsize).astype(np.int64)
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=hsize + 4 * n)
    feats = feats.astype(np.float64).reshape(n, d)
    bad = np.flatnonzero(labels >= k)
    if bad.size:
        i = int(bad[0])
        raise DataError(f"{path}: label {labels[i]} of sample {i} (byte {hsize + 4 * i}) is outside [0, {k})")
    nonfinite = np.flatnonzero(~np.isfinite(feats.ravel()))
    if nonfinite.size:
        j = int(nonfinite[0])
        raise DataError(
            f"{path}: non-finite feature at sample {j // d}, column {j % d} "
            f"(byte {hsize + 4 * n + 4 * j})"
        )
    return Dataset(feats, labels, k=int(k))


def _read_csv(path: Path) -> Dataset:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: line 1: empty file, expected a 'label,f0,...' header") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "label" or len(header) < 2:
            raise DataError(f"{path}: line 1: malformed header {header!r}")
        for j, name in enumerate(header[1:]):
            if name != f"f{j}":
                raise DataError(f"{path}: line 1: column {j + 1} is {name!r}, expected 'f{j}'")
        d = len(header) - 1
        raw_labels: list[str] = []
        rows: list[list[float]] = []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 1:
                raise DataError(f"{path}: line {lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                values = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}: line {lineno}: non-finite feature value")
            raw_labels.append(row[0].strip())
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    labels = _labels_to_ids(raw_labels, path)
    return Dataset(np.array(rows, dtype=np.float64), labels)


def _labels_to_ids(raw: Sequence[str], path: Path) -> np.ndarray:
    try:
        ids = np.array([int(v) for v in raw], dtype=np.int64)
    except ValueError:
        # text labels: dense ids in sorted order
        names = sorted(set(raw))
        lookup = {name: i for i, name in enumerate(names)}
        logger.info("%s: mapped %d text labels to ids %s", path, len(names), lookup)
        return np.array([lookup[v] for v in raw], dtype=np.int64)
    neg = np.flatnonzero(ids < 0)
    if neg.size:
        # header is line 1
        raise DataError(f"{path}: line {int(neg[0]) + 2}: negative label {ids[neg[0]]}")
    return ids


def save_dataset(dataset: Dataset, path, format: Optional[str] = None) -> Path:
    path = Path(path)
    fmt = _infer_format(path, format)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "binary":
        header = _DATASET_HEADER.pack(DATASET_MAGIC, FORMAT_VERSION, dataset.n, dataset.d, dataset.k)
        with path.open("wb") as fh:
            fh.write(header)
            fh.write(dataset.labels.astype("<u4").tobytes())
            fh.write(dataset.features.astype("<f4").tobytes())
    else:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["label"] + [f"f{j}" for j in range(dataset.d)])
            for y, x in zip(dataset.labels, dataset.features):
                w.writerow([int(y)] + [repr(float(v)) for v in x])
    return path


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_per_class: int = 100
    k: int = 3
    d: int = 8
    class_separation: float = 5.0
    noise_sigma: float = 1.0
    seed: int = 0

    def check(self) -> None:
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be positive")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if not self.class_separation > 0:
            raise ConfigError("class_separation must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """Isotropic Gaussian blobs, one per class, centred on scaled basis vectors.

    Class ``c`` is centred at ``class_separation * e_(c mod d)``. Samples are
    emitted in a seeded random order.
    """
    spec.check()
    rng = stream(spec.seed, "synthetic")
    n = spec.n_per_class * spec.k
    labels = np.repeat(np.arange(spec.k), spec.n_per_class)
    means = np.zeros((spec.k, spec.d))
    means[np.arange(spec.k), np.arange(spec.k) % spec.d] = spec.class_separation
    feats = means[labels] + spec.noise_sigma * rng.standard_normal((n, spec.d))
    order = rng.permutation(n)
    return Dataset(feats[order], labels[order], k=spec.k)


def train_test_split(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified seeded split; each class contributes ``round(frac * count)`` test samples."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    rng = stream(seed, "split")
    test_idx = []
    for c in range(dataset.k):
        members = np.flatnonzero(dataset.labels == c)
        take = int(round(test_fraction * members.size))
        take = min(take, members.size - 1) if members.size > 1 else 0
        test_idx.extend(rng.permutation(members)[:take].tolist())
    test_mask = np.zeros(dataset.n, dtype=bool)
    test_mask[test_idx] = True
    return dataset.subset(np.flatnonzero(~test_mask)), dataset.subset(np.flatnonzero(test_mask))


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


def mask_to_dict(mask: PruneMask, **meta) -> dict:
    doc = {"n": mask.n, "selected_indices": [int(i) for i in mask.indices], "mask_semantics": MASK_SEMANTICS}
    doc.update(meta)
    return doc


def save_mask(mask: PruneMask, path, **meta) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(mask_to_dict(mask, **meta), indent=2) + "\n", encoding="utf-8")
    return path


def mask_from_dict(doc: dict, source: str = "<mask>") -> PruneMask:
    try:
        n = doc["n"]
        indices = doc["selected_indices"]
    except (KeyError, TypeError):
        raise DataError(f"{source}: mask must be an object with 'n' and 'selected_indices'") from None
    if not isinstance(n, int) or isinstance(n, bool) or n < 0:
        raise DataError(f"{source}: 'n' must be a nonnegative integer")
    semantics = doc.get("mask_semantics", MASK_SEMANTICS)
    if semantics != MASK_SEMANTICS:
        raise DataError(f"{source}: mask_semantics {semantics!r} is not supported (only 'pruned')")
    prev = -1
    for pos, i in enumerate(indices):
        if not isinstance(i, int) or isinstance(i, bool):
            raise DataError(f"{source}: selected_indices[{pos}] = {i!r} is not an integer")
        if i < 0 or i >= n:
            raise DataError(f"{source}: selected_indices[{pos}] = {i} out of range for n={n}")
        if i == prev:
            raise DataError(f"{source}: duplicate index {i} at position {pos}")
        if i < prev:
            raise DataError(f"{source}: selected_indices must be strictly increasing (position {pos})")
        prev = i
    return PruneMask.from_indices(n, indices)


def load_mask(path) -> PruneMask:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None
    return mask_from_dict(doc, str(path))


def load_mask_meta(path) -> tuple[PruneMask, dict]:
    path = Path(path)
    mask = load_mask(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    return mask, {k: v for k, v in doc.items() if k not in ("n", "selected_indices")}


# ---------------------------------------------------------------------------
# influence dumps
# ---------------------------------------------------------------------------


def save_influence(S: InfluenceSet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_INFLUENCE_HEADER.pack(INFLUENCE_MAGIC, FORMAT_VERSION, S.n, S.N))
        fh.write(S.vectors.astype("<f8").tobytes())
    return path


def load_influence(path) -> InfluenceSet:
    path = Path(path)
    raw = path.read_bytes()
    hsize = _INFLUENCE_HEADER.size
    if len(raw) < hsize:
        raise DataError(f"{path}: malformed header")
    magic, version, n, N = _INFLUENCE_HEADER.unpack_from(raw, 0)
    if magic != INFLUENCE_MAGIC or version != FORMAT_VERSION:
        raise DataError(f"{path}: malformed header at byte 0 (magic {magic!r}, version {version})")
    if len(raw) - hsize != 8 * n * N:
        raise DataError(f"{path}: payload is {len(raw) - hsize} bytes, expected {8 * n * N}")
    vecs = np.frombuffer(raw, dtype="<f8", offset=hsize).reshape(n, N)
    return InfluenceSet(vecs)


# ---------------------------------------------------------------------------
# reports and plot tables
# ---------------------------------------------------------------------------


def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def report_to_dict(report: PruneReport, timestamp: bool = True) -> dict:
    n = report.mask.n
    doc = {
        "mode": report.mode,
        "n": n,
        "m": report.m,
        "epsilon": report.epsilon,
        "achieved_norm": report.achieved_norm,
        # ||sum of raw parameter influences||: the 1/n-free scaling
        "achieved_norm_unscaled": report.achieved_norm * n,
        "feasible": report.feasible,
        "seed": report.seed,
        "predicted_gap": report.predicted_gap,
        "measured_gap": report.measured_gap,
        "mask": mask_to_dict(report.mask),
        "objective_trace": [[int(i), float(v)] for i, v in report.objective_trace],
        "diagnostics": report.extras,
    }
    if timestamp:
        doc["created_at"] = datetime.now(timezone.utc).isoformat()
    return _clean(doc)


def trace_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_trace.csv")


def write_report(report: PruneReport, path, timestamp: bool = True) -> Path:
    """Write the JSON report plus ``<stem>_trace.csv`` with the objective trace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_to_dict(report, timestamp), indent=2) + "\n", encoding="utf-8")
    write_csv(trace_path_for(path), ["iteration", "objective"], report.objective_trace)
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_scores(scores: np.ndarray, path) -> Path:
    return write_csv(path, ["index", "score"], ((i, float(s)) for i, s in enumerate(scores)))
