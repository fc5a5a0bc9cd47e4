"""Clustered bootstrap and stochastic-dominance sign tests.

The bootstrap resamples whole individuals (clusters) with replacement; a
drawn individual brings all of its rows, and drawing one twice yields two
distinct resampled individuals. Every replicate's randomness is derived from
(plan seed, replicate index) alone, so results do not depend on worker count
or scheduling.

The dominance tests compare the empirical distribution of estimated CATEs
against the degenerate distribution at zero. With F the CATE distribution
and F0(z) = 1{z >= 0}:

    H0+ (all effects nonnegative): F(z) <= F0(z) for all z
    H0- (all effects nonpositive): F(z) >= F0(z) for all z

    D+ = sup_z F(z) - F0(z)   (= share of strictly negative effects)
    D- = sup_z F0(z) - F(z)   (= share of strictly positive effects)

Bootstrap p-values count strict exceedances of the observed statistic. The
re-centered variant compares each replicate's distribution to the original
estimate rather than to F0, which calibrates the test when effects sit on
the null boundary; the uncentered variant is kept selectable for comparison.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .data import PanelDataset
from .errors import ConfigError, InsufficientDataError, ValidationError
from .util import parallel_map, seed_sequence

DROP_WARN_SHARE = 0.01


@dataclass(frozen=True)
class BootstrapPlan:
    """Replicate count and master seed for one bootstrap run."""

    n_replicates: int = 1999
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_replicates < 1:
            raise ConfigError("bootstrap needs at least 1 replicate")


@dataclass(frozen=True)
class DominanceResult:
    """Sign-dominance statistics and bootstrap p-values for one subgroup."""

    d_plus: float
    d_minus: float
    p_plus: float
    p_minus: float
    n_obs: int
    n_replicates: int
    n_dropped: int
    recentered: bool


# ----------------------------------------------------------------------
# resampling primitives
# ----------------------------------------------------------------------


def _cluster_index(clusters) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(order, starts, counts) blocks over factorized cluster labels."""
    if isinstance(clusters, PanelDataset):
        return clusters.cluster_rows()
    codes = np.asarray(clusters)
    if codes.dtype.kind not in "iu":
        _, codes = np.unique(codes, return_inverse=True)
        n_clusters = codes.max() + 1
    else:
        uniq, codes = np.unique(codes, return_inverse=True)
        n_clusters = len(uniq)
    order = np.argsort(codes, kind="stable")
    counts = np.bincount(codes, minlength=n_clusters)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return order, starts, counts


def _draw_rows(
    index: tuple[np.ndarray, np.ndarray, np.ndarray], rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One bootstrap draw: (row indices with multiplicity, cluster draws)."""
    order, starts, counts = index
    n_clusters = len(starts)
    draws = rng.integers(0, n_clusters, size=n_clusters)
    sel_counts = counts[draws]
    total = int(sel_counts.sum())
    ends = np.cumsum(sel_counts)
    offsets = np.repeat(ends - sel_counts, sel_counts)
    flat = np.repeat(starts[draws], sel_counts) + np.arange(total) - offsets
    return order[flat], draws


def cluster_bootstrap_indices(clusters, rng: np.random.Generator) -> np.ndarray:
    """Row indices of one cluster-bootstrap resample.

    Draws n_clusters cluster keys with replacement and returns the row
    indices of all their observations, with multiplicity, in draw order.

    Args:
        clusters: a PanelDataset or an array of per-row cluster labels.
        rng: source of randomness for this draw.
    """
    rows, _ = _draw_rows(_cluster_index(clusters), rng)
    return rows


def resample_dataset(
    ds: PanelDataset, rng: np.random.Generator
) -> tuple[PanelDataset, np.ndarray]:
    """Cluster-bootstrap resample as a fresh dataset.

    Each drawn cluster becomes a new individual (ids 0..n_clusters-1 in draw
    order), so a cluster drawn twice contributes two distinct individuals.
    Returns the dataset and the original row index of every resampled row.
    """
    index = ds.cluster_rows()
    rows, draws = _draw_rows(index, rng)
    counts = index[2][draws]
    new_ids = np.repeat(np.arange(len(draws)), counts)
    out = PanelDataset._unchecked(
        new_ids,
        ds.period[rows],
        ds.treatment[rows],
        ds.outcome[rows],
        ds.covariates[rows],
        ds.covariate_names,
    )
    return out, rows


def bootstrap_ci(
    statistic: Callable[[np.ndarray, np.random.Generator], float | np.ndarray],
    clusters,
    plan: BootstrapPlan,
) -> tuple:
    """Percentile (2.5, 97.5) cluster-bootstrap confidence interval.

    Args:
        statistic: callable(rows, rng) evaluated on each resample's row
            indices; may return a scalar or a vector (bands are computed
            per coordinate).
        clusters: a PanelDataset or an array of per-row cluster labels.
        plan: replicate count and seed.

    Returns:
        (low, high), scalars or arrays matching the statistic's shape.
    """
    index = _cluster_index(clusters)
    stats = []
    for b in range(plan.n_replicates):
        rng = np.random.Generator(
            np.random.PCG64(seed_sequence(plan.seed, "bootstrap-ci", b))
        )
        rows, _ = _draw_rows(index, rng)
        stats.append(statistic(rows, rng))
    stats = np.asarray(stats, dtype=np.float64)
    low = np.percentile(stats, 2.5, axis=0)
    high = np.percentile(stats, 97.5, axis=0)
    if stats.ndim == 1:
        return float(low), float(high)
    return low, high


# ----------------------------------------------------------------------
# dominance statistics
# ----------------------------------------------------------------------


def dominance_statistics(cates: np.ndarray) -> tuple[float, float]:
    """(D+, D-): shares of strictly negative and strictly positive values.

    These counting forms equal the exact suprema of the empirical CDF gaps
    against the point mass at zero; zeros contribute to neither statistic.
    """
    values = np.asarray(cates, dtype=np.float64)
    if values.size == 0:
        raise InsufficientDataError("dominance statistics need at least one value")
    if not np.isfinite(values).all():
        raise ValidationError("non-finite effect estimate")
    n = values.size
    return float((values < 0).sum() / n), float((values > 0).sum() / n)


def edf_sup_gaps(sorted_ref: np.ndarray, sorted_new: np.ndarray) -> tuple[float, float]:
    """Exact (sup_z Fnew - Fref, sup_z Fref - Fnew) for two empirical CDFs.

    Both inputs must be sorted ascending. The supremum of a difference of
    step functions is attained on the pooled sample points, their left
    limits, or at zero; all are evaluated, no grid approximation.
    """
    cand = np.concatenate([sorted_ref, sorted_new, [0.0]])
    n_ref = len(sorted_ref)
    n_new = len(sorted_new)
    ref_r = np.searchsorted(sorted_ref, cand, side="right") / n_ref
    new_r = np.searchsorted(sorted_new, cand, side="right") / n_new
    ref_l = np.searchsorted(sorted_ref, cand, side="left") / n_ref
    new_l = np.searchsorted(sorted_new, cand, side="left") / n_new
    up = max(float((new_r - ref_r).max()), float((new_l - ref_l).max()), 0.0)
    down = max(float((ref_r - new_r).max()), float((ref_l - new_l).max()), 0.0)
    return up, down


# ----------------------------------------------------------------------
# dominance test engine
# ----------------------------------------------------------------------


def _resolve_cates(pipeline, ds: PanelDataset, plan: BootstrapPlan) -> tuple[np.ndarray, bool]:
    """Original estimates and whether refit mode is active."""
    if callable(pipeline):
        rng = np.random.Generator(
            np.random.PCG64(seed_sequence(plan.seed, "dominance-original"))
        )
        cates = np.asarray(pipeline(ds, rng), dtype=np.float64)
        refit = True
    else:
        cates = np.asarray(pipeline, dtype=np.float64)
        refit = False
    if len(cates) != len(ds):
        raise ValidationError(
            f"pipeline produced {len(cates)} estimates for {len(ds)} observations"
        )
    if not np.isfinite(cates).all():
        raise ValidationError("non-finite effect estimate from pipeline")
    return cates, refit


def _battery_chunk(args) -> list:
    """Replicate range worker: per-replicate sup statistics per subgroup."""
    (ds, pipeline, cates0, refit, masks, sorted_refs, seed, b_lo, b_hi) = args
    out = []
    for b in range(b_lo, b_hi):
        rng = np.random.Generator(np.random.PCG64(seed_sequence(seed, "dominance", b)))
        try:
            if refit:
                ds_b, rows = resample_dataset(ds, rng)
                vals_b = np.asarray(pipeline(ds_b, rng), dtype=np.float64)
                if len(vals_b) != len(rows) or not np.isfinite(vals_b).all():
                    raise ValidationError("bad replicate estimates")
            else:
                rows = cluster_bootstrap_indices(ds, rng)
                vals_b = cates0[rows]
        except Exception:  # noqa: BLE001 - any replicate failure drops it
            out.append(None)
            continue
        stats = []
        for mask, ref in zip(masks, sorted_refs):
            sub = vals_b[mask[rows]]
            if sub.size == 0:
                stats.append(None)
                continue
            sub.sort()
            up, down = edf_sup_gaps(ref, sub)
            neg = float((sub < 0).sum() / sub.size)
            pos = float((sub > 0).sum() / sub.size)
            stats.append((up, down, neg, pos))
        out.append(stats)
    return out


def _battery_arrays(
    pipeline, ds: PanelDataset, subgroups: Mapping[str, np.ndarray], plan: BootstrapPlan
) -> dict[str, tuple[tuple[float, float], np.ndarray, int, int]]:
    """Shared replicate machinery behind the dominance tests.

    Returns name -> (observed (D+, D-), per-replicate statistic array with
    columns (sup_up, sup_down, neg share, pos share), subgroup size, dropped
    count).
    """
    cates0, refit = _resolve_cates(pipeline, ds, plan)
    names = list(subgroups)
    if not names:
        raise ConfigError("no subgroups given")
    masks = []
    sorted_refs = []
    base_stats = []
    n = len(ds)
    for name in names:
        idx = np.asarray(subgroups[name])
        if idx.size == 0:
            raise InsufficientDataError(f"subgroup {name!r} has no observations")
        if idx.min() < 0 or idx.max() >= n:
            raise ValidationError(f"subgroup {name!r} has out-of-range row indices")
        mask = np.zeros(n, dtype=bool)
        mask[idx] = True
        masks.append(mask)
        ref = np.sort(cates0[idx])
        sorted_refs.append(ref)
        base_stats.append(dominance_statistics(cates0[idx]))

    B = plan.n_replicates
    workers = max(1, plan.workers)
    n_chunks = workers if workers > 1 else 1
    bounds = np.linspace(0, B, n_chunks + 1, dtype=int)
    jobs = [
        (ds, pipeline, cates0, refit, masks, sorted_refs, plan.seed, int(lo), int(hi))
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    chunks = parallel_map(_battery_chunk, jobs, workers=workers)
    replicate_stats = [row for chunk in chunks for row in chunk]

    out: dict[str, tuple[tuple[float, float], np.ndarray, int, int]] = {}
    for j, name in enumerate(names):
        cells = [
            row[j] for row in replicate_stats if row is not None and row[j] is not None
        ]
        dropped = B - len(cells)
        if not cells:
            raise InsufficientDataError(
                f"all {B} bootstrap replicates failed for subgroup {name!r}"
            )
        if dropped > DROP_WARN_SHARE * B:
            warnings.warn(
                f"dominance test dropped {dropped} of {B} replicates "
                f"for subgroup {name!r}",
                stacklevel=3,
            )
        out[name] = (base_stats[j], np.asarray(cells), int(masks[j].sum()), dropped)
    return out


def _result_from_arrays(
    stats: tuple[float, float], arr: np.ndarray, n_obs: int, dropped: int, recenter: bool
) -> DominanceResult:
    d_plus, d_minus = stats
    completed = len(arr)
    if recenter:
        p_plus = float((arr[:, 0] > d_plus).sum() / completed)
        p_minus = float((arr[:, 1] > d_minus).sum() / completed)
    else:
        p_plus = float((arr[:, 2] > d_plus).sum() / completed)
        p_minus = float((arr[:, 3] > d_minus).sum() / completed)
    return DominanceResult(
        d_plus=d_plus,
        d_minus=d_minus,
        p_plus=p_plus,
        p_minus=p_minus,
        n_obs=n_obs,
        n_replicates=completed,
        n_dropped=dropped,
        recentered=recenter,
    )


def dominance_battery(
    pipeline,
    ds: PanelDataset,
    subgroups: Mapping[str, np.ndarray],
    plan: BootstrapPlan,
    recenter: bool = True,
) -> dict[str, DominanceResult]:
    """Dominance tests for several subgroups sharing one set of replicates.

    Args:
        pipeline: either a callable(dataset, rng) -> per-row effect estimates
            (full refit inside every replicate) or an array of fixed per-row
            estimates that are only resampled. With plan.workers > 1 a
            callable must be picklable (a module-level function or partial).
        ds: dataset whose clusters are resampled.
        subgroups: name -> row indices (into ds) of each tested subgroup.
        plan: replicate count, seed, worker count.
        recenter: compare replicates to the original estimated distribution
            (True) or directly to the null distribution at zero (False).

    Returns:
        name -> DominanceResult. Replicates that fail to fit, or miss a
        subgroup entirely, are dropped from that subgroup's counts; a
        warning is issued if more than 1% drop.
    """
    raw = _battery_arrays(pipeline, ds, subgroups, plan)
    return {
        name: _result_from_arrays(*vals, recenter=recenter)
        for name, vals in raw.items()
    }


def dominance_test_both(
    pipeline,
    ds: PanelDataset,
    idx: np.ndarray | None,
    plan: BootstrapPlan,
) -> tuple[DominanceResult, DominanceResult]:
    """(re-centered, uncentered) results from one shared set of replicates.

    Both variants count strict exceedances of the same observed statistics;
    they differ only in the replicate statistic compared against them.
    """
    if idx is None:
        idx = np.arange(len(ds))
    raw = _battery_arrays(pipeline, ds, {"subgroup": idx}, plan)
    stats, arr, n_obs, dropped = raw["subgroup"]
    return (
        _result_from_arrays(stats, arr, n_obs, dropped, recenter=True),
        _result_from_arrays(stats, arr, n_obs, dropped, recenter=False),
    )


def dominance_test(
    pipeline,
    ds: PanelDataset,
    idx: np.ndarray | None,
    plan: BootstrapPlan,
    recenter: bool = True,
) -> DominanceResult:
    """Dominance test for one subgroup (all rows when ``idx`` is None).

    See :func:`dominance_battery` for the pipeline contract and p-value
    conventions (strict exceedance, completed-replicate denominators).
    """
    if idx is None:
        idx = np.arange(len(ds))
    return dominance_battery(pipeline, ds, {"subgroup": idx}, plan, recenter)[
        "subgroup"
    ]
