"""Orthogonal and unadjusted treatment effect scores.

Both scores are per-observation transformations whose conditional mean given
covariates is the conditional average treatment effect, so regressing a score
on covariates estimates effect heterogeneity, and its sample mean estimates
the average effect.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PanelDataset
from .errors import InsufficientDataError, ValidationError
from .inference import BootstrapPlan, bootstrap_ci
from .nuisance import NuisanceFit


@dataclass
class ScoreVector:
    """Per-observation effect score with its cluster labels."""

    values: np.ndarray
    kind: str
    clusters: np.ndarray


@dataclass(frozen=True)
class AteEstimate:
    estimate: float
    ci_low: float
    ci_high: float


def orthogonal_score(ds: PanelDataset, nf: NuisanceFit) -> ScoreVector:
    """Doubly robust score built from cross-fitted nuisances.

    score = mu1 - mu0 + D (Y - mu1) / p - (1 - D) (Y - mu0) / (1 - p)

    The conditional mean of the score given covariates equals the conditional
    average treatment effect if either the outcome regressions or the
    treatment probability are correct.
    """
    n = len(ds)
    for arr, name in ((nf.mu1_hat, "mu1_hat"), (nf.mu0_hat, "mu0_hat"), (nf.p_hat, "p_hat")):
        if len(arr) != n:
            raise ValidationError(f"nuisance {name} has {len(arr)} rows, expected {n}")
    p = nf.p_hat
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValidationError("p_hat must lie strictly inside (0, 1)")
    d = ds.treatment.astype(np.float64)
    y = ds.outcome
    values = (
        nf.mu1_hat
        - nf.mu0_hat
        + d * (y - nf.mu1_hat) / p
        - (1.0 - d) * (y - nf.mu0_hat) / (1.0 - p)
    )
    return ScoreVector(values=values, kind="orthogonal", clusters=ds.cluster_codes)


def unadjusted_score(ds: PanelDataset, p_marginal: float | None = None) -> ScoreVector:
    """Modified-outcome score using only the marginal treatment share.

    score = (D - p) Y / (p (1 - p)), with p the marginal treatment
    probability (defaults to the empirical treated share of observations).
    """
    if p_marginal is None:
        p_marginal = float(ds.treatment.mean())
    if not 0.0 < p_marginal < 1.0:
        raise InsufficientDataError(
            f"marginal treatment probability {p_marginal} must be in (0, 1); "
            "is one arm empty?"
        )
    d = ds.treatment.astype(np.float64)
    values = (d - p_marginal) * ds.outcome / (p_marginal * (1.0 - p_marginal))
    return ScoreVector(values=values, kind="unadjusted", clusters=ds.cluster_codes)


def ate(sv: ScoreVector, plan: BootstrapPlan | None = None) -> AteEstimate:
    """Average treatment effect: score mean with a cluster-bootstrap 95% CI."""
    if plan is None:
        plan = BootstrapPlan(n_replicates=999, seed=0)
    values = sv.values

    def stat(rows: np.ndarray, rng: np.random.Generator) -> float:
        return float(values[rows].mean())

    low, high = bootstrap_ci(stat, sv.clusters, plan)
    return AteEstimate(estimate=float(values.mean()), ci_low=low, ci_high=high)
