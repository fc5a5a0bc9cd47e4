"""Figure rendering for the report path.

All figures go straight to PNG files through the Agg backend with pinned
metadata, so the bytes are identical across reruns of the same inputs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .cate import CurvePoints
from .qte import EDF, QteCurve

_META = {"Software": "hetfx"}


def _save(fig, path: str) -> str:
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def curve_figure(
    curve: CurvePoints,
    path: str,
    title: str = "Smoothed conditional effects",
    xlabel: str = "running variable",
    threshold: float | None = None,
) -> str:
    """Effect curve with its bootstrap band and a zero reference line."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    if curve.ci_low is not None:
        ax.fill_between(
            curve.grid, curve.ci_low, curve.ci_high,
            alpha=0.25, color="tab:blue", linewidth=0, label="95% band",
        )
    ax.plot(curve.grid, curve.estimate, color="tab:blue", lw=1.8, label="estimate")
    ax.axhline(0.0, color="black", lw=0.8)
    if threshold is not None:
        ax.axvline(threshold, color="tab:red", lw=0.8, ls="--", label="threshold")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("conditional effect")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def qte_figure(q: QteCurve, path: str, title: str = "Quantile treatment effects") -> str:
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    ax.plot(q.taus, q.values, color="tab:blue", lw=1.8, marker="o", ms=3)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xlabel("quantile")
    ax.set_ylabel("treated minus control quantile")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def edf_figure(
    actual: EDF,
    simulated: EDF,
    path: str,
    title: str = "Actual vs simulated outcome distribution",
) -> str:
    """Step plot of two (sub-)distribution functions on a shared support."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for edf, label, color in (
        (actual, "actual", "tab:blue"),
        (simulated, "simulated", "tab:orange"),
    ):
        x = np.concatenate(([edf.support[0]], edf.support))
        y = np.concatenate(([0.0], edf.cum))
        ax.step(x, y, where="post", label=label, color=color, lw=1.6)
    ax.set_xlabel("outcome")
    ax.set_ylabel("cumulative mass")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)
