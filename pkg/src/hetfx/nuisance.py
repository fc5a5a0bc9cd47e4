"""Cross-fitted nuisance estimation for the orthogonal score.

Individuals are split into two folds. The outcome regressions (one per arm)
and the treatment-probability regression are fit on one fold and used to
predict the other, then the roles are swapped, so every observation is
predicted only by models whose training data never contained its individual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CovariateSet, PanelDataset, select_covariates
from .errors import InsufficientDataError
from .trees import ForestConfig, fit_regression_forest

P_CLIP = (0.01, 0.99)
_MAX_SPLIT_ATTEMPTS = 10


@dataclass
class NuisanceFit:
    """Cross-fitted nuisance predictions, aligned with dataset rows.

    ``fold`` is the fold label (0 or 1) of each observation's individual.
    ``training_clusters[f]`` holds the cluster codes whose rows trained the
    models that predict fold f (that is, the clusters of the other fold),
    which makes the no-self-prediction property directly auditable.
    """

    mu1_hat: np.ndarray
    mu0_hat: np.ndarray
    p_hat: np.ndarray
    fold: np.ndarray
    training_clusters: dict = field(default_factory=dict)


def _split_folds(
    ds: PanelDataset, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Cluster-level fold assignment with both arms present in both folds.

    Redraws the split up to 10 times if a fold misses an arm, then raises.
    """
    n_clusters = ds.n_individuals
    if n_clusters < 8:
        raise InsufficientDataError(
            f"cross-fitting needs at least 8 clusters, got {n_clusters}"
        )
    d_cluster = ds.cluster_treatment()
    for _ in range(_MAX_SPLIT_ATTEMPTS):
        perm = rng.permutation(n_clusters)
        half = n_clusters // 2
        fold_of_cluster = np.empty(n_clusters, dtype=np.int8)
        fold_of_cluster[perm[:half]] = 0
        fold_of_cluster[perm[half:]] = 1
        ok = True
        for f in (0, 1):
            arms = d_cluster[fold_of_cluster == f]
            if arms.min() == arms.max():
                ok = False
                break
        if ok:
            return fold_of_cluster, fold_of_cluster[ds.cluster_codes]
    raise InsufficientDataError(
        "could not split clusters into folds with both arms present "
        f"after {_MAX_SPLIT_ATTEMPTS} attempts"
    )


def cross_fit_nuisances(
    ds: PanelDataset,
    cs: CovariateSet,
    cfg: ForestConfig,
    rng: np.random.Generator | int,
    workers: int = 1,
) -> NuisanceFit:
    """Estimate mu1, mu0, and the treatment probability with cross-fitting.

    All three nuisances are honest regression forests: mu1 on treated rows,
    mu0 on control rows, and p as a regression of the 0/1 treatment indicator
    on covariates. Predicted probabilities are clipped to [0.01, 0.99].

    Args:
        ds: panel dataset.
        cs: covariate columns the forests may use.
        cfg: forest hyperparameters shared by the three models.
        rng: generator or integer seed.
        workers: process count forwarded to forest fitting.

    Returns:
        NuisanceFit with row-aligned predictions.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    features = select_covariates(ds, cs)
    fold_of_cluster, fold_of_row = _split_folds(ds, rng)

    n = len(ds)
    mu1 = np.empty(n, dtype=np.float64)
    mu0 = np.empty(n, dtype=np.float64)
    p = np.empty(n, dtype=np.float64)
    training: dict[int, np.ndarray] = {}

    for predict_fold in (0, 1):
        train_fold = 1 - predict_fold
        train_rows = fold_of_row == train_fold
        predict_rows = fold_of_row == predict_fold
        training[predict_fold] = np.flatnonzero(fold_of_cluster == train_fold)

        x_train = features[train_rows]
        cl_train = ds.cluster_codes[train_rows]
        d_train = ds.treatment[train_rows]
        y_train = ds.outcome[train_rows]
        x_pred = features[predict_rows]

        treated = d_train == 1
        rng_mu1, rng_mu0, rng_p = rng.spawn(3)
        f_mu1 = fit_regression_forest(
            x_train[treated], y_train[treated], cl_train[treated],
            cfg, rng_mu1, workers=workers,
        )
        f_mu0 = fit_regression_forest(
            x_train[~treated], y_train[~treated], cl_train[~treated],
            cfg, rng_mu0, workers=workers,
        )
        f_p = fit_regression_forest(
            x_train, d_train.astype(np.float64), cl_train,
            cfg, rng_p, workers=workers,
        )
        mu1[predict_rows] = f_mu1.predict(x_pred)
        mu0[predict_rows] = f_mu0.predict(x_pred)
        p[predict_rows] = f_p.predict(x_pred)

    np.clip(p, P_CLIP[0], P_CLIP[1], out=p)
    return NuisanceFit(
        mu1_hat=mu1, mu0_hat=mu0, p_hat=p,
        fold=fold_of_row, training_clusters=training,
    )
