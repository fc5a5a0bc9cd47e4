"""Cross-fitted nuisance forests: calibration, structure, and fold hygiene."""

import numpy as np
import pytest

from conftest import build_panel
from hetfx.errors import InsufficientDataError
from hetfx.nuisance import P_CLIP, cross_fit_nuisances
from hetfx.trees import ForestConfig

CFG = ForestConfig(n_trees=20, min_leaf=10)


def test_propensity_mean_near_half():
    ds = build_panel(n_individuals=2000, seed=1, p_treat=0.5)
    nf = cross_fit_nuisances(ds, None, CFG, rng=0)
    assert 0.45 < nf.p_hat.mean() < 0.55
    assert nf.p_hat.min() >= P_CLIP[0]
    assert nf.p_hat.max() <= P_CLIP[1]


def test_zero_outcome_gives_zero_regressions():
    ds = build_panel(n_individuals=200, seed=2, outcome=np.zeros(200))
    nf = cross_fit_nuisances(ds, None, CFG, rng=0)
    np.testing.assert_array_equal(nf.mu1_hat, np.zeros(200))
    np.testing.assert_array_equal(nf.mu0_hat, np.zeros(200))


def test_folds_are_cluster_level_and_cover_both_labels():
    ds = build_panel(n_individuals=50, n_periods=3, seed=3)
    nf = cross_fit_nuisances(ds, None, CFG, rng=1)
    assert set(np.unique(nf.fold).tolist()) == {0, 1}
    for cluster in range(ds.n_individuals):
        rows = ds.cluster_codes == cluster
        assert len(np.unique(nf.fold[rows])) == 1


def test_no_individual_predicted_by_its_own_fold():
    ds = build_panel(n_individuals=60, n_periods=2, seed=4)
    nf = cross_fit_nuisances(ds, None, CFG, rng=2)
    for f in (0, 1):
        trainers = set(nf.training_clusters[f].tolist())
        predicted = set(ds.cluster_codes[nf.fold == f].tolist())
        assert not trainers & predicted
        assert trainers | predicted == set(range(ds.n_individuals))


def test_prediction_really_ignores_own_outcome():
    # plant one wild outlier individual; with honest forests trained on the
    # other fold, its own mu-hat must stay in the range of everyone else's
    ds = build_panel(n_individuals=120, seed=5, outcome=np.zeros(120))
    y = ds.outcome.copy()
    y[0] = 1e6
    ds = build_panel(
        n_individuals=120,
        seed=5,
        outcome=y,
        covariates=ds.covariates,
        treatment=ds.treatment,
    )
    nf = cross_fit_nuisances(ds, None, CFG, rng=3)
    fold_of_outlier = nf.fold[0]
    # models predicting the outlier trained on the other fold: zero outcomes
    assert nf.mu1_hat[0] == pytest.approx(0.0, abs=1e-12)
    assert nf.mu0_hat[0] == pytest.approx(0.0, abs=1e-12)
    # the outlier does contaminate predictions for the opposite fold
    other = nf.fold != fold_of_outlier
    arm = nf.mu1_hat if ds.treatment[0] == 1 else nf.mu0_hat
    assert arm[other].max() > 1.0


def test_reproducible_and_seed_sensitive():
    ds = build_panel(n_individuals=80, seed=6)
    a = cross_fit_nuisances(ds, None, CFG, rng=9)
    b = cross_fit_nuisances(ds, None, CFG, rng=9)
    np.testing.assert_array_equal(a.mu1_hat, b.mu1_hat)
    np.testing.assert_array_equal(a.p_hat, b.p_hat)
    np.testing.assert_array_equal(a.fold, b.fold)
    c = cross_fit_nuisances(ds, None, CFG, rng=10)
    assert not np.array_equal(a.fold, c.fold) or not np.array_equal(
        a.mu1_hat, c.mu1_hat
    )


def test_worker_invariance():
    ds = build_panel(n_individuals=80, seed=7)
    a = cross_fit_nuisances(ds, None, CFG, rng=4, workers=1)
    b = cross_fit_nuisances(ds, None, CFG, rng=4, workers=2)
    np.testing.assert_array_equal(a.mu1_hat, b.mu1_hat)
    np.testing.assert_array_equal(a.mu0_hat, b.mu0_hat)
    np.testing.assert_array_equal(a.p_hat, b.p_hat)


def test_too_few_clusters_rejected():
    ds = build_panel(n_individuals=6, seed=8)
    with pytest.raises(InsufficientDataError, match="8 clusters"):
        cross_fit_nuisances(ds, None, CFG, rng=0)


def test_one_armed_panel_cannot_be_split():
    d = np.ones(20, dtype=np.int8)
    d[0] = 0  # a single control cluster can never sit in both folds
    ds = build_panel(n_individuals=20, seed=9, treatment=d)
    with pytest.raises(InsufficientDataError, match="both arms"):
        cross_fit_nuisances(ds, None, CFG, rng=0)


def test_extreme_propensities_are_clipped():
    # two-point covariate perfectly predicting treatment: every tree splits
    # in the gap and emits pure 0/1 leaves, so the clip must bind exactly
    x = np.where(np.arange(400) % 2 == 0, 0.0, 10.0)[:, None]
    d = (x[:, 0] > 5.0).astype(np.int8)
    ds = build_panel(n_individuals=400, treatment=d, covariates=x)
    nf = cross_fit_nuisances(ds, None, ForestConfig(n_trees=10, min_leaf=5), rng=1)
    assert nf.p_hat.min() == pytest.approx(P_CLIP[0], abs=0)
    assert nf.p_hat.max() == pytest.approx(P_CLIP[1], abs=0)
