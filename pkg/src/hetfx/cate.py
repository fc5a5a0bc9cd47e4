"""Conditional effect estimators on per-observation scores.

All estimators regress a score whose conditional mean is the conditional
average treatment effect on covariates. Three families:

* stratified local-constant cells (covariate strata crossed with periods),
* a single honest tree with cluster-level cross-validated leaf size,
* honest subsampled forests, optionally cross-fit over the nuisance folds.

Plus the descriptive layer: sign shares and kernel-smoothed effect curves
with cluster-bootstrap bands.
"""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass

from .data import PanelDataset
from .errors import (
    ConfigError,
    DegenerateGroupError,
    EmptyDatasetError,
    InsufficientDataError,
    ValidationError,
)
from .inference import BootstrapPlan
from .trees import (
    ForestConfig,
    RegressionForest,
    RegressionTree,
    fit_regression_forest,
    grow_tree,
)
from .util import seed_sequence

STRATUM_LABELS = ("zero", "below-median", "at-or-above-median")


@dataclass(frozen=True)
class CateEstimates:
    """Per-observation effect estimates plus the estimator that made them."""

    values: np.ndarray
    estimator: str


@dataclass(frozen=True)
class SignShares:
    """Percent of estimates at or above zero vs strictly below."""

    pct_positive: float
    pct_negative: float


@dataclass(frozen=True)
class CurvePoints:
    """Kernel-smoothed effect curve on a grid, with optional bootstrap bands."""

    grid: np.ndarray
    estimate: np.ndarray
    ci_low: np.ndarray | None
    ci_high: np.ndarray | None
    bandwidth: float
    n_obs: int


def _values_of(cates) -> np.ndarray:
    values = np.asarray(getattr(cates, "values", cates), dtype=np.float64)
    if values.ndim != 1:
        raise ValidationError("effect estimates must be one-dimensional")
    return values


# ----------------------------------------------------------------------
# stratified local-constant estimator
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class LocalConstantModel:
    """Treated-control mean differences in covariate-stratum x period cells.

    Strata of the chosen covariate: exactly zero, positive below the median
    of the positive values, at or above that median. Numerically identical
    to a saturated interacted regression on the cell dummies.
    """

    column: int
    column_name: str
    positive_median: float
    periods: np.ndarray
    delta: np.ndarray          # (3, n_periods)
    control_mean: np.ndarray   # (3, n_periods)
    n_treated: np.ndarray      # (3, n_periods)
    n_control: np.ndarray      # (3, n_periods)

    def strata_of(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if (values < 0).any():
            raise ValidationError(
                f"stratifying covariate '{self.column_name}' has negative values"
            )
        return np.where(values == 0, 0, np.where(values < self.positive_median, 1, 2))

    def predict(self, ds: PanelDataset) -> np.ndarray:
        """Cell effect for every row of ``ds``."""
        if self.column >= ds.covariates.shape[1]:
            raise ValidationError(
                f"dataset has no covariate column {self.column}"
            )
        strata = self.strata_of(ds.covariates[:, self.column])
        t_idx = np.searchsorted(self.periods, ds.period)
        bad = (t_idx >= len(self.periods)) | (
            self.periods[np.minimum(t_idx, len(self.periods) - 1)] != ds.period
        )
        if bad.any():
            raise ValidationError(
                f"period {ds.period[bad][0]} was not present at fit time"
            )
        return self.delta[strata, t_idx]


def fit_local_constant(
    ds: PanelDataset, column: int = 0
) -> tuple[LocalConstantModel, CateEstimates]:
    """Fit treated-control mean differences per stratum-period cell.

    Args:
        ds: panel dataset.
        column: index of the nonnegative covariate to stratify on.

    Raises:
        DegenerateGroupError: a cell is empty or single-armed, naming the
            stratum and period.
    """
    if not 0 <= column < ds.covariates.shape[1]:
        raise ValidationError(f"no covariate column {column}")
    v = ds.covariates[:, column]
    name = ds.covariate_names[column]
    if (v < 0).any():
        raise ValidationError(f"stratifying covariate '{name}' has negative values")
    positive = v[v > 0]
    if positive.size == 0:
        raise DegenerateGroupError(
            f"covariate '{name}' has no positive values; strata undefined"
        )
    med = float(np.median(positive))
    strata = np.where(v == 0, 0, np.where(v < med, 1, 2))
    periods = np.unique(ds.period)
    P = len(periods)
    t_idx = np.searchsorted(periods, ds.period)
    treated = ds.treatment == 1

    delta = np.zeros((3, P))
    cmean = np.zeros((3, P))
    n1 = np.zeros((3, P), dtype=np.int64)
    n0 = np.zeros((3, P), dtype=np.int64)
    for k in range(3):
        for ti, pt in enumerate(periods):
            cell = (strata == k) & (t_idx == ti)
            ct, cc = int((cell & treated).sum()), int((cell & ~treated).sum())
            if ct == 0 or cc == 0:
                arm = "treated" if ct == 0 else "control"
                raise DegenerateGroupError(
                    f"stratum '{STRATUM_LABELS[k]}' period {pt}: no {arm} observations"
                )
            y1 = ds.outcome[cell & treated]
            y0 = ds.outcome[cell & ~treated]
            delta[k, ti] = y1.mean() - y0.mean()
            cmean[k, ti] = y0.mean()
            n1[k, ti], n0[k, ti] = ct, cc
    model = LocalConstantModel(
        column=column,
        column_name=name,
        positive_median=med,
        periods=periods,
        delta=delta,
        control_mean=cmean,
        n_treated=n1,
        n_control=n0,
    )
    return model, CateEstimates(values=delta[strata, t_idx], estimator="local-constant")


# ----------------------------------------------------------------------
# honest tree with cross-validated leaf size
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TreeCvConfig:
    """Leaf-size grid and fold count for the single honest tree."""

    min_leaf_grid: tuple = (50, 100, 200, 400, 800, 1600)
    cv_folds: int = 10
    include_root: bool = True

    def __post_init__(self) -> None:
        if not self.min_leaf_grid and not self.include_root:
            raise ConfigError("empty candidate set for tree cross-validation")
        if any(m < 1 for m in self.min_leaf_grid):
            raise ConfigError("min_leaf candidates must be positive")
        if self.cv_folds < 2:
            raise ConfigError("tree cross-validation needs at least 2 folds")


def _cv_sse(x, y, fold_of_cluster_rows, candidate) -> float:
    """Out-of-fold squared error of one leaf-size candidate.

    Fits adaptive trees (no honesty) on the non-held folds; ``candidate`` is
    None for the root-only model.
    """
    sse = 0.0
    n_folds = fold_of_cluster_rows.max() + 1
    for f in range(n_folds):
        hold = fold_of_cluster_rows == f
        y_tr, y_val = y[~hold], y[hold]
        if candidate is None:
            pred = np.full(hold.sum(), y_tr.mean())
        else:
            tree = grow_tree(x[~hold], y_tr, None, None, candidate)
            pred = tree.predict(x[hold])
        sse += float(((y_val - pred) ** 2).sum())
    return sse


def _single_leaf_tree(value: float, n_est: int) -> RegressionTree:
    return RegressionTree(
        feature=np.array([-1], dtype=np.int64),
        threshold=np.array([0.0]),
        left=np.array([-1], dtype=np.int64),
        right=np.array([-1], dtype=np.int64),
        value=np.array([value]),
        n_estimation_obs=np.array([n_est], dtype=np.int64),
    )


def fit_cate_tree(
    features: np.ndarray,
    score: np.ndarray,
    clusters: np.ndarray,
    cfg: TreeCvConfig | None = None,
    rng: np.random.Generator | int = 0,
) -> tuple[RegressionTree, CateEstimates]:
    """Fit one honest tree, choosing the leaf size by clustered CV.

    Clusters are split 50/50 into a split-search half and an estimation half.
    Leaf-size candidates are evaluated simplest first (root, then the grid
    from largest to smallest leaf) with cluster-level folds inside the
    split-search half only; a candidate replaces the incumbent only on a
    strict improvement in held-out squared error, so ties go to the simpler
    model. The final tree searches splits on the split half at the chosen
    leaf size and fills leaf values from the estimation half.

    Returns the tree (with ``cv_candidates``, ``cv_sse`` and ``cv_min_leaf``
    attached) and its predictions for every input row.
    """
    cfg = cfg or TreeCvConfig()
    features = np.asarray(features, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    if features.ndim != 2 or len(features) != len(score):
        raise ValidationError("features and score shapes do not match")
    uniq, codes = np.unique(np.asarray(clusters), return_inverse=True)
    if len(codes) != len(score):
        raise ValidationError("clusters and score shapes do not match")
    C = len(uniq)
    if C < 4:
        raise InsufficientDataError(f"tree fitting needs at least 4 clusters, got {C}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    perm = rng.permutation(C)
    split_clusters = perm[: C // 2]
    est_clusters = perm[C // 2 :]
    in_split = np.zeros(C, dtype=bool)
    in_split[split_clusters] = True
    split_rows = in_split[codes]
    x_sp, y_sp = features[split_rows], score[split_rows]
    x_es, y_es = features[~split_rows], score[~split_rows]

    # cluster-level folds inside the split half
    n_folds = min(cfg.cv_folds, len(split_clusters))
    fold_of_cluster = np.full(C, -1, dtype=np.int64)
    shuffled = rng.permutation(split_clusters)
    for f, block in enumerate(np.array_split(shuffled, n_folds)):
        fold_of_cluster[block] = f
    fold_rows = fold_of_cluster[codes[split_rows]]

    candidates: list = []
    if cfg.include_root:
        candidates.append(None)
    candidates.extend(sorted(set(cfg.min_leaf_grid), reverse=True))
    sses = [_cv_sse(x_sp, y_sp, fold_rows, cand) for cand in candidates]
    best = 0
    for i in range(1, len(candidates)):
        if sses[i] < sses[best]:
            best = i
    chosen = candidates[best]

    if chosen is None:
        tree = _single_leaf_tree(float(y_es.mean()), len(y_es))
    else:
        tree = grow_tree(x_sp, y_sp, x_es, y_es, chosen)
    tree.split_cluster_ids = np.sort(split_clusters)
    tree.estimate_cluster_ids = np.sort(est_clusters)
    tree.cv_candidates = tuple("root" if c is None else c for c in candidates)
    tree.cv_sse = tuple(sses)
    tree.cv_min_leaf = chosen
    return tree, CateEstimates(values=tree.predict(features), estimator="tree")


# ----------------------------------------------------------------------
# forests
# ----------------------------------------------------------------------


def fit_cate_forest(
    features: np.ndarray,
    score: np.ndarray,
    clusters: np.ndarray,
    cfg: ForestConfig | None = None,
    rng: np.random.Generator | int = 0,
    workers: int = 1,
) -> tuple[RegressionForest, CateEstimates]:
    """Honest subsampled forest on the score, predicting every input row."""
    cfg = cfg or ForestConfig()
    forest = fit_regression_forest(features, score, clusters, cfg, rng, workers=workers)
    values = forest.predict(np.asarray(features, dtype=np.float64))
    return forest, CateEstimates(values=values, estimator="forest")


def crossfit_cate_forest(
    features: np.ndarray,
    score: np.ndarray,
    clusters: np.ndarray,
    folds: np.ndarray,
    cfg: ForestConfig | None = None,
    rng: np.random.Generator | int = 0,
    workers: int = 1,
) -> tuple[tuple[RegressionForest, RegressionForest], CateEstimates]:
    """Fold-swapped forests: one per nuisance fold, predictions averaged.

    Each forest is fit on the rows of one fold and predicts all rows; the two
    predictions are averaged, so every observation mixes an own-fold and an
    out-of-fold forest.

    Args:
        folds: per-row fold labels in {0, 1}, as produced by the nuisance
            cross-fit.
    """
    cfg = cfg or ForestConfig()
    features = np.asarray(features, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    folds = np.asarray(folds)
    if len(folds) != len(score):
        raise ValidationError("folds and score shapes do not match")
    if not np.isin(folds, (0, 1)).all():
        raise ValidationError("fold labels must be 0 or 1")
    if not (folds == 0).any() or not (folds == 1).any():
        raise InsufficientDataError("cross-fit forests need rows in both folds")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    child = rng.bit_generator.seed_seq.spawn(2)
    clusters = np.asarray(clusters)
    forests = []
    acc = np.zeros(len(score))
    for f in (0, 1):
        rows = folds == f
        forest = fit_regression_forest(
            features[rows],
            score[rows],
            clusters[rows],
            cfg,
            np.random.Generator(np.random.PCG64(child[f])),
            workers=workers,
        )
        forests.append(forest)
        acc += forest.predict(features)
    return (forests[0], forests[1]), CateEstimates(
        values=acc / 2.0, estimator="crossfit-forest"
    )


def predict_cate(model, data) -> CateEstimates:
    """Per-row effect predictions from any fitted effect model."""
    if isinstance(model, LocalConstantModel):
        if not isinstance(data, PanelDataset):
            raise ConfigError("local-constant prediction needs a PanelDataset")
        return CateEstimates(values=model.predict(data), estimator="local-constant")
    if isinstance(model, RegressionTree):
        return CateEstimates(values=model.predict(data), estimator="tree")
    if isinstance(model, RegressionForest):
        return CateEstimates(values=model.predict(data), estimator="forest")
    raise ConfigError(f"no prediction rule for {type(model).__name__}")


# ----------------------------------------------------------------------
# descriptive layer
# ----------------------------------------------------------------------


def sign_shares(cates) -> SignShares:
    """Percent nonnegative vs strictly negative; exact zeros count as
    nonnegative, so the two shares always sum to 100."""
    values = _values_of(cates)
    if values.size == 0:
        raise EmptyDatasetError("sign shares of no estimates")
    if not np.isfinite(values).all():
        raise ValidationError("non-finite effect estimate")
    pct_neg = 100.0 * float((values < 0).mean())
    return SignShares(pct_positive=100.0 - pct_neg, pct_negative=pct_neg)


def smooth_cates(
    cates,
    running: np.ndarray,
    clusters: np.ndarray,
    idx: np.ndarray | None = None,
    plan: BootstrapPlan | None = None,
    truncate_above: float | None = None,
    grid_size: int = 200,
) -> CurvePoints:
    """Kernel-smoothed effect curve against a running variable.

    Nadaraya-Watson with a Gaussian kernel and the rule-of-thumb bandwidth
    1.06 * sd * m^(-1/5). With a plan, pointwise 95 percent cluster-bootstrap
    bands are added (cluster multiplicities reweight the fixed kernel matrix,
    so no refitting) and widened where needed to contain the point estimate.

    Args:
        cates: per-row effect estimates (array or CateEstimates).
        running: per-row running variable (same length as the full sample).
        clusters: per-row cluster labels, used for the bootstrap bands.
        idx: optional row subset to smooth over.
        plan: bootstrap plan for the bands; None skips them.
        truncate_above: optionally drop rows with running value above this.
        grid_size: number of evaluation points.
    """
    values = _values_of(cates)
    running = np.asarray(running, dtype=np.float64)
    clusters = np.asarray(clusters)
    if not (len(values) == len(running) == len(clusters)):
        raise ValidationError("estimates, running variable and clusters must align")
    if idx is not None:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(values)):
            raise ValidationError("subset index out of range")
        values, running, clusters = values[idx], running[idx], clusters[idx]
    if truncate_above is not None:
        keep = running <= truncate_above
        values, running, clusters = values[keep], running[keep], clusters[keep]
    m = len(values)
    if m < 2:
        raise InsufficientDataError("smoothing needs at least 2 observations")
    if not np.isfinite(values).all() or not np.isfinite(running).all():
        raise ValidationError("non-finite input to smoothing")
    sd = float(running.std(ddof=1))
    if sd == 0.0:
        raise ValidationError("running variable is constant; curve undefined")
    if grid_size < 2:
        raise ConfigError("grid needs at least 2 points")

    h = 1.06 * sd * m ** (-0.2)
    grid = np.linspace(running.min(), running.max(), grid_size)
    K = np.exp(-0.5 * ((grid[:, None] - running[None, :]) / h) ** 2)
    den0 = K.sum(axis=1)
    if (den0 <= 0.0).any():
        raise ValidationError("kernel weights underflowed; bandwidth too small")
    est = (K @ values) / den0

    if plan is None:
        return CurvePoints(
            grid=grid, estimate=est, ci_low=None, ci_high=None, bandwidth=h, n_obs=m
        )

    _, codes = np.unique(clusters, return_inverse=True)
    C = codes.max() + 1
    B = plan.n_replicates
    curves = np.empty((B, grid_size))
    chunk = 64
    for lo in range(0, B, chunk):
        hi = min(lo + chunk, B)
        cnt = np.empty((m, hi - lo))
        for j, b in enumerate(range(lo, hi)):
            rng = np.random.Generator(np.random.PCG64(seed_sequence(plan.seed, "smooth", b)))
            draws = rng.integers(0, C, size=C)
            cnt[:, j] = np.bincount(draws, minlength=C)[codes]
        num = K @ (cnt * values[:, None])
        den = K @ cnt
        with np.errstate(invalid="ignore", divide="ignore"):
            curves[lo:hi] = np.where(den > 0, num / den, np.nan).T
    lo_band = np.nanpercentile(curves, 2.5, axis=0)
    hi_band = np.nanpercentile(curves, 97.5, axis=0)
    return CurvePoints(
        grid=grid,
        estimate=est,
        ci_low=np.minimum(lo_band, est),
        ci_high=np.maximum(hi_band, est),
        bandwidth=h,
        n_obs=m,
    )
