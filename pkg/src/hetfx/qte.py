"""Quantile treatment effects and distribution-nesting tests.

The nesting test asks whether the estimated conditional effects can
reproduce the arm-wise outcome distributions: control outcomes shifted up by
their estimated effects should match the treated outcome distribution, and
treated outcomes shifted down should match the control one. Comparisons use
positive-part sub-distributions (mass at and below zero removed, not
renormalized), so a mass point at zero earnings does not mask distributional
mismatch above it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import PanelDataset
from .errors import (
    ConfigError,
    DegenerateDistributionError,
    EmptyDatasetError,
    InsufficientDataError,
    ValidationError,
)
from .inference import BootstrapPlan, cluster_bootstrap_indices, resample_dataset
from .util import parallel_map, seed_sequence


@dataclass(frozen=True)
class EDF:
    """Empirical (sub-)distribution function on a finite support.

    ``cum[i]`` is the probability mass at or below ``support[i]``; the last
    entry is the total mass, which is below 1 for sub-distributions.
    """

    support: np.ndarray
    cum: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.cum[-1]) if len(self.cum) else 0.0

    @classmethod
    def from_values(cls, values: np.ndarray, denominator: int | None = None) -> "EDF":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise EmptyDatasetError("cannot build an EDF from no values")
        if not np.isfinite(values).all():
            raise ValidationError("non-finite value in EDF input")
        denominator = denominator if denominator is not None else values.size
        support, counts = np.unique(values, return_counts=True)
        return cls(support=support, cum=np.cumsum(counts) / denominator)

    def evaluate(self, z) -> np.ndarray | float:
        """F(z), right-continuous; 0 below the support."""
        z = np.asarray(z, dtype=np.float64)
        padded = np.concatenate(([0.0], self.cum))
        out = padded[np.searchsorted(self.support, z, side="right")]
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QteCurve:
    """Arm-wise quantiles and their difference on a tau grid."""

    taus: np.ndarray
    q_treated: np.ndarray
    q_control: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class KsResult:
    """Kolmogorov-Smirnov nesting statistics and bootstrap p-values."""

    ks_treated: float
    ks_control: float
    ks_joint: float
    p_treated: float
    p_control: float
    p_joint: float
    n_replicates: int
    n_dropped: int


def empirical_quantiles(values: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """Type-1 (left-continuous inverse) empirical quantiles.

    Q(tau) = min{y in sample : F(y) >= tau}, so the result is always an
    observed sample point. Requires 0 < tau <= 1.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyDatasetError("quantiles of an empty sample")
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    if np.any(taus <= 0.0) or np.any(taus > 1.0):
        raise ConfigError("quantile levels must lie in (0, 1]")
    n = values.size
    srt = np.sort(values)
    k = np.ceil(n * taus).astype(np.int64)
    k = np.clip(k, 1, n)
    # guard float rounding in n*tau so that k is exactly min{k: k/n >= tau}
    k = np.where((k - 1 >= 1) & ((k - 1) / n >= taus), k - 1, k)
    k = np.where(k / n < taus, k + 1, k)
    return srt[k - 1]


def qte(ds: PanelDataset, taus: np.ndarray) -> QteCurve:
    """Quantile treatment effects from arm-wise empirical quantiles."""
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    y1 = ds.outcome[ds.treatment == 1]
    y0 = ds.outcome[ds.treatment == 0]
    if y1.size == 0 or y0.size == 0:
        raise InsufficientDataError("QTE needs observations in both arms")
    q1 = empirical_quantiles(y1, taus)
    q0 = empirical_quantiles(y0, taus)
    return QteCurve(taus=taus, q_treated=q1, q_control=q0, values=q1 - q0)


def _cate_values(cates, n: int) -> np.ndarray:
    values = np.asarray(getattr(cates, "values", cates), dtype=np.float64)
    if len(values) != n:
        raise ValidationError(f"{len(values)} effect estimates for {n} observations")
    return values


def simulated_distribution(ds: PanelDataset, cates, arm: int) -> EDF:
    """Counterfactual outcome distribution implied by estimated effects.

    arm=1: control outcomes shifted up by their estimated effects (a
    simulation of the treated-outcome distribution); arm=0: treated outcomes
    shifted down (a simulation of the control one).
    """
    if arm not in (0, 1):
        raise ConfigError(f"arm must be 0 or 1, got {arm}")
    values = _cate_values(cates, len(ds))
    if arm == 1:
        rows = ds.treatment == 0
        shifted = ds.outcome[rows] + values[rows]
    else:
        rows = ds.treatment == 1
        shifted = ds.outcome[rows] - values[rows]
    if shifted.size == 0:
        raise InsufficientDataError("source arm for the simulated distribution is empty")
    return EDF.from_values(shifted)


def positive_part(dist) -> EDF:
    """Sub-distribution above zero: mass at or below zero removed, kept
    unnormalized, so the total mass is Pr(Y > 0)."""
    if not isinstance(dist, EDF):
        dist = EDF.from_values(dist)
    keep = dist.support > 0
    if not keep.any():
        raise DegenerateDistributionError("no mass above zero")
    mass_at_zero = dist.cum[~keep][-1] if (~keep).any() else 0.0
    return EDF(support=dist.support[keep], cum=dist.cum[keep] - mass_at_zero)


def ks_distance(f: EDF, g: EDF) -> float:
    """Exact sup |f - g| over the pooled support (right and left limits)."""
    cand = np.concatenate([f.support, g.support])
    pf = np.concatenate(([0.0], f.cum))
    pg = np.concatenate(([0.0], g.cum))
    fr = pf[np.searchsorted(f.support, cand, side="right")]
    gr = pg[np.searchsorted(g.support, cand, side="right")]
    fl = pf[np.searchsorted(f.support, cand, side="left")]
    gl = pg[np.searchsorted(g.support, cand, side="left")]
    return float(max(np.abs(fr - gr).max(), np.abs(fl - gl).max()))


# ----------------------------------------------------------------------
# nesting test
# ----------------------------------------------------------------------


def _positive_sorted(values: np.ndarray) -> tuple[np.ndarray, int]:
    """(sorted positive values, denominator) for fast sub-EDF evaluation."""
    pos = np.sort(values[values > 0.0])
    return pos, values.size


def _sub_edf_at(sorted_pos: np.ndarray, den: int, cand: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    right = np.searchsorted(sorted_pos, cand, side="right") / den
    left = np.searchsorted(sorted_pos, cand, side="left") / den
    return right, left


def _ks_pair(y: np.ndarray, d: np.ndarray, vals: np.ndarray):
    """Positive-part EDFs for both nesting comparisons.

    Returns ((actual_1, sim_1), (actual_0, sim_0)) with each entry a
    (sorted positive values, denominator) pair; None if an arm is empty.
    """
    t = d == 1
    c = ~t
    if not t.any() or not c.any():
        return None
    return (
        (_positive_sorted(y[t]), _positive_sorted(y[c] + vals[c])),
        (_positive_sorted(y[c]), _positive_sorted(y[t] - vals[t])),
    )


def _ks_stat(actual, sim) -> float:
    cand = np.concatenate([actual[0], sim[0]])
    ar, al = _sub_edf_at(actual[0], actual[1], cand)
    sr, sl = _sub_edf_at(sim[0], sim[1], cand)
    return float(max(np.abs(ar - sr).max(initial=0.0), np.abs(al - sl).max(initial=0.0)))


def _ks_recentered(actual_b, sim_b, actual_0, sim_0) -> float:
    """sup | (Fb - Fsb) - (F0 - Fs0) | over the pooled candidate points."""
    cand = np.concatenate([actual_b[0], sim_b[0], actual_0[0], sim_0[0]])
    gaps = []
    for side in ("right", "left"):
        fb = np.searchsorted(actual_b[0], cand, side=side) / actual_b[1]
        fsb = np.searchsorted(sim_b[0], cand, side=side) / sim_b[1]
        f0 = np.searchsorted(actual_0[0], cand, side=side) / actual_0[1]
        fs0 = np.searchsorted(sim_0[0], cand, side=side) / sim_0[1]
        gaps.append(np.abs((fb - fsb) - (f0 - fs0)).max(initial=0.0))
    return float(max(gaps))


def _ks_chunk(args) -> list:
    ds, pipeline, cates0, refit, pair0, seed, b_lo, b_hi = args
    out = []
    for b in range(b_lo, b_hi):
        rng = np.random.Generator(np.random.PCG64(seed_sequence(seed, "ks", b)))
        try:
            if refit:
                ds_b, rows = resample_dataset(ds, rng)
                vals_b = np.asarray(pipeline(ds_b, rng), dtype=np.float64)
                if len(vals_b) != len(rows) or not np.isfinite(vals_b).all():
                    raise ValidationError("bad replicate estimates")
                y_b, d_b = ds_b.outcome, ds_b.treatment
            else:
                rows = cluster_bootstrap_indices(ds, rng)
                y_b, d_b, vals_b = ds.outcome[rows], ds.treatment[rows], cates0[rows]
        except Exception:  # noqa: BLE001 - failed replicate is dropped
            out.append(None)
            continue
        pair_b = _ks_pair(y_b, d_b, vals_b)
        if pair_b is None:
            out.append(None)
            continue
        ks_t = _ks_recentered(pair_b[0][0], pair_b[0][1], pair0[0][0], pair0[0][1])
        ks_c = _ks_recentered(pair_b[1][0], pair_b[1][1], pair0[1][0], pair0[1][1])
        out.append((ks_t, ks_c))
    return out


def ks_nesting_test(
    ds: PanelDataset,
    cates,
    plan: BootstrapPlan,
    pipeline=None,
) -> KsResult:
    """Test whether estimated effects nest the arm-wise outcome distributions.

    Compares the positive part of each arm's actual outcome EDF with the
    positive part of its simulated counterpart from the other arm; the joint
    statistic is the larger of the two. Bootstrap replicates (clustered,
    re-centered at the original gap) give strict-exceedance p-values.

    Args:
        ds: panel dataset.
        cates: per-row effect estimates (array or CateEstimates) used both
            for the observed statistics and, without a pipeline, inside the
            bootstrap (fixed-model mode).
        plan: replicate count, seed, worker count.
        pipeline: optional callable(dataset, rng) -> per-row estimates to
            refit inside every replicate; must be picklable if
            plan.workers > 1.
    """
    values = _cate_values(cates, len(ds))
    if not np.isfinite(values).all():
        raise ValidationError("non-finite effect estimate")
    pair0 = _ks_pair(ds.outcome, ds.treatment, values)
    if pair0 is None:
        raise InsufficientDataError("nesting test needs observations in both arms")
    for (actual, sim) in pair0:
        if actual[0].size == 0 or sim[0].size == 0:
            raise DegenerateDistributionError(
                "an arm has no positive mass; positive-part comparison undefined"
            )
    ks_t = _ks_stat(*pair0[0])
    ks_c = _ks_stat(*pair0[1])
    ks_j = max(ks_t, ks_c)

    refit = pipeline is not None
    B = plan.n_replicates
    workers = max(1, plan.workers)
    n_chunks = workers if workers > 1 else 1
    bounds = np.linspace(0, B, n_chunks + 1, dtype=int)
    jobs = [
        (ds, pipeline, values, refit, pair0, plan.seed, int(lo), int(hi))
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    chunks = parallel_map(_ks_chunk, jobs, workers=workers)
    rep = [row for chunk in chunks for row in chunk]
    kept = [r for r in rep if r is not None]
    dropped = len(rep) - len(kept)
    if not kept:
        raise InsufficientDataError(f"all {B} nesting-test replicates failed")
    if dropped > 0.01 * B:
        warnings.warn(
            f"nesting test dropped {dropped} of {B} replicates", stacklevel=2
        )
    arr = np.asarray(kept, dtype=np.float64)
    joint_b = arr.max(axis=1)
    completed = len(kept)
    return KsResult(
        ks_treated=ks_t,
        ks_control=ks_c,
        ks_joint=ks_j,
        p_treated=float((arr[:, 0] > ks_t).sum() / completed),
        p_control=float((arr[:, 1] > ks_c).sum() / completed),
        p_joint=float((joint_b > ks_j).sum() / completed),
        n_replicates=completed,
        n_dropped=dropped,
    )
