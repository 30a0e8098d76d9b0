"""Figures written next to the CSV outputs.

The CSVs stay the primary interface; these figures are a convenience for a
quick look at a run. Everything renders with the non-interactive Agg backend
and returns the path written.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PathLike = Union[str, Path]

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # no version string, so figures do not change with the matplotlib install
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_objective_trace(iterations: Sequence[int], objective: Sequence[float], path: PathLike, title: str = "") -> Path:
    """Annealing objective against iteration for the winning chain."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(np.asarray(iterations), np.asarray(objective), lw=1.0, color="C0")
        ax.set_xlabel("iteration")
        ax.set_ylabel("objective")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_gap_scatter(rows: Sequence[Mapping], path: PathLike) -> Path:
    """Measured gap against achieved norm, one marker per method.

    ``rows`` are the oracle CSV rows (dicts with ``method``, ``achieved_norm``,
    ``measured_gap`` and ``bound_value``). The dashed line joins the
    first-order bounds sorted by achieved norm.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        methods = sorted({r["method"] for r in rows})
        for j, method in enumerate(methods):
            sel = [r for r in rows if r["method"] == method]
            x = np.array([float(r["achieved_norm"]) for r in sel])
            y = np.array([float(r["measured_gap"]) for r in sel])
            ax.scatter(x, y, s=14, color=f"C{j}", label=method, alpha=0.8)
        pts = sorted((float(r["achieved_norm"]), float(r["bound_value"])) for r in rows)
        if pts:
            bx, by = zip(*pts)
            ax.plot(bx, by, ls="--", lw=0.8, color="0.4", label="first-order bound")
        ax.set_xlabel("achieved norm of summed influence")
        ax.set_ylabel("measured test-loss gap")
        ax.legend()
        return _save(fig, path)


def plot_ratio_comparison(results: Mapping[str, Mapping[float, float]], path: PathLike, ylabel: str = "test cross-entropy") -> Path:
    """Metric against prune ratio, one line per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for j, (method, by_ratio) in enumerate(sorted(results.items())):
            ratios = sorted(by_ratio)
            ax.plot(ratios, [by_ratio[r] for r in ratios], marker="o", ms=3, lw=1.0, color=f"C{j}", label=method)
        ax.set_xlabel("prune ratio")
        ax.set_ylabel(ylabel)
        ax.legend()
        return _save(fig, path)


def plot_loo(predicted: Sequence[float], actual: Sequence[float], path: PathLike) -> Path:
    """Predicted against retrained leave-one-out parameter-change norms."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.scatter(p, a, s=8, color="C0", alpha=0.7)
        hi = float(max(p.max(initial=0.0), a.max(initial=0.0)))
        ax.plot([0.0, hi], [0.0, hi], ls="--", lw=0.8, color="0.4")
        ax.set_xlabel("predicted change norm")
        ax.set_ylabel("retrained change norm")
        return _save(fig, path)
