"""Honest regression trees and cluster-subsampled random forests.

Honesty means sample splitting inside every tree: one half of the tree's
clusters chooses the splits by greedy squared-error reduction, the other half
populates the leaf means. A split is admissible only when each child keeps at
least ``min_leaf`` rows in BOTH halves, so every leaf estimate averages at
least ``min_leaf`` held-out rows. All subsampling and splitting is done on
whole clusters (individuals); rows of one individual never straddle halves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, ValidationError
from .util import parallel_map

_NO_FEATURE = -1


@dataclass
class ForestConfig:
    """Forest hyperparameters (shared by nuisance and effect forests)."""

    n_trees: int = 1000
    min_leaf: int = 10
    subsample_fraction: float = 0.5
    feature_fraction: float = 2.0 / 3.0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValidationError("n_trees must be at least 1")
        if self.min_leaf < 1:
            raise ValidationError("min_leaf must be at least 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValidationError("subsample_fraction must be in (0, 1]")
        if not 0.0 < self.feature_fraction <= 1.0:
            raise ValidationError("feature_fraction must be in (0, 1]")


@dataclass
class RegressionTree:
    """Flat-array binary tree. ``feature[i] < 0`` marks node i as a leaf.

    ``value`` holds the estimation-half mean for every node (internal nodes
    keep theirs as the fallback for leaves that would otherwise be empty) and
    ``n_estimation_obs`` the number of estimation rows that reached the node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_estimation_obs: np.ndarray
    feature_ids: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    split_cluster_ids: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    estimate_cluster_ids: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Leaf value for every row of ``features``."""
        features = np.asarray(features, dtype=np.float64)
        out = np.empty(len(features), dtype=np.float64)
        stack = [(0, np.arange(len(features)))]
        while stack:
            nid, rows = stack.pop()
            f = self.feature[nid]
            if f < 0:
                out[rows] = self.value[nid]
                continue
            go_left = features[rows, f] <= self.threshold[nid]
            stack.append((self.left[nid], rows[go_left]))
            stack.append((self.right[nid], rows[~go_left]))
        return out

    def to_text(self, feature_names: list[str] | None = None) -> str:
        """Indented text dump of the tree structure."""
        lines: list[str] = []

        def descend(nid: int, depth: int) -> None:
            pad = "  " * depth
            f = self.feature[nid]
            if f < 0:
                lines.append(
                    f"{pad}leaf value={self.value[nid]:.6g} "
                    f"n_est={self.n_estimation_obs[nid]}"
                )
                return
            name = feature_names[f] if feature_names else f"x{f}"
            lines.append(f"{pad}{name} <= {self.threshold[nid]:.6g}")
            descend(self.left[nid], depth + 1)
            lines.append(f"{pad}{name} > {self.threshold[nid]:.6g}")
            descend(self.right[nid], depth + 1)

        descend(0, 0)
        return "\n".join(lines)


@dataclass
class RegressionForest:
    """Unweighted average of honest trees."""

    trees: list[RegressionTree]
    config: ForestConfig

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Mean of per-tree predictions, accumulated in tree order."""
        features = np.asarray(features, dtype=np.float64)
        acc = np.zeros(len(features), dtype=np.float64)
        for tree in self.trees:
            acc += tree.predict(features)
        return acc / len(self.trees)


def grow_tree(
    x_split: np.ndarray,
    y_split: np.ndarray,
    x_est: np.ndarray | None,
    y_est: np.ndarray | None,
    min_leaf: int,
    feature_ids: np.ndarray | None = None,
) -> RegressionTree:
    """Grow one greedy SSE tree, honest when an estimation half is given.

    Split search is exhaustive over the candidate features, with thresholds
    at midpoints of consecutive distinct sorted values. Ties in SSE reduction
    break toward the lowest feature index, then the lowest threshold. With no
    estimation half the leaf values are split-half means (used for adaptive
    cross-validation trees).

    Args:
        x_split: (m, k) covariates of the split-search half.
        y_split: length-m targets of the split-search half.
        x_est: covariates of the estimation half, or None for adaptive mode.
        y_est: targets of the estimation half, or None for adaptive mode.
        min_leaf: minimum rows per child in each available half.
        feature_ids: original column indices of the candidate features; used
            so the stored tree refers to full-matrix columns. Defaults to all
            columns in order.
    """
    x_split = np.asarray(x_split, dtype=np.float64)
    y_split = np.asarray(y_split, dtype=np.float64)
    if x_split.ndim != 2 or len(x_split) != len(y_split):
        raise ValidationError("x_split and y_split shapes do not match")
    if not np.isfinite(y_split).all():
        raise ValidationError("non-finite target in split half")
    honest = x_est is not None
    if honest:
        x_est = np.asarray(x_est, dtype=np.float64)
        y_est = np.asarray(y_est, dtype=np.float64)
        if len(x_est) == 0:
            raise InsufficientDataError("estimation half is empty")
        if not np.isfinite(y_est).all():
            raise ValidationError("non-finite target in estimation half")
    if feature_ids is None:
        feature_ids = np.arange(x_split.shape[1])
    else:
        feature_ids = np.asarray(feature_ids, dtype=np.int64)
        if len(feature_ids) != x_split.shape[1]:
            raise ValidationError("feature_ids length does not match x_split columns")
        order = np.argsort(feature_ids)
        feature_ids = feature_ids[order]
        x_split = x_split[:, order]
        if honest:
            x_est = x_est[:, order]

    n_feats = x_split.shape[1]
    feat_node: list[int] = []
    thr_node: list[float] = []
    left_node: list[int] = []
    right_node: list[int] = []
    value_node: list[float] = []
    n_est_node: list[int] = []

    def new_node() -> int:
        feat_node.append(_NO_FEATURE)
        thr_node.append(0.0)
        left_node.append(-1)
        right_node.append(-1)
        value_node.append(0.0)
        n_est_node.append(0)
        return len(feat_node) - 1

    all_tr = np.arange(len(y_split))
    all_es = np.arange(len(y_est)) if honest else all_tr
    root = new_node()
    stack: list[tuple[int, np.ndarray, np.ndarray, float]] = [
        (root, all_tr, all_es, float("nan"))
    ]

    while stack:
        nid, tr, es, parent_value = stack.pop()
        y_node = y_split[tr]
        m = tr.size
        if honest:
            n_es = es.size
            value = float(y_est[es].mean()) if n_es else parent_value
        else:
            n_es = m
            value = float(y_node.mean())
        value_node[nid] = value
        n_est_node[nid] = n_es

        if m < 2 * min_leaf or n_es < 2 * min_leaf:
            continue
        total = y_node.sum()
        parent_score = total * total / m
        best_gain = 1e-12 * (abs(parent_score) + 1.0)
        best_feat = -1
        best_thr = 0.0
        for j in range(n_feats):
            xv = x_split[tr, j]
            order = np.argsort(xv)
            xs = xv[order]
            lo = xs[: m - 1]
            hi = xs[1:]
            thr = 0.5 * (lo + hi)
            # a candidate must separate distinct values and leave min_leaf
            # rows on each side of the split half
            valid = (thr > lo) & (thr < hi)
            if min_leaf > 1:
                valid[: min_leaf - 1] = False
                valid[m - min_leaf :] = False
            if not valid.any():
                continue
            if honest:
                es_sorted = np.sort(x_est[es, j])
                n_left_es = np.searchsorted(es_sorted, thr, side="right")
                valid &= (n_left_es >= min_leaf) & (n_es - n_left_es >= min_leaf)
                if not valid.any():
                    continue
            ys = y_node[order]
            s = np.cumsum(ys)[: m - 1]
            k = np.arange(1, m, dtype=np.float64)
            score = s * s / k + (total - s) * (total - s) / (m - k)
            score[~valid] = -np.inf
            i_best = int(np.argmax(score))
            gain = score[i_best] - parent_score
            if gain > best_gain:
                best_gain = gain
                best_feat = j
                best_thr = float(thr[i_best])

        if best_feat < 0:
            continue
        go_left_tr = x_split[tr, best_feat] <= best_thr
        if honest:
            go_left_es = x_est[es, best_feat] <= best_thr
        else:
            go_left_es = go_left_tr
        feat_node[nid] = int(feature_ids[best_feat])
        thr_node[nid] = best_thr
        lid = new_node()
        rid = new_node()
        left_node[nid] = lid
        right_node[nid] = rid
        stack.append((rid, tr[~go_left_tr], es[~go_left_es], value))
        stack.append((lid, tr[go_left_tr], es[go_left_es], value))

    return RegressionTree(
        feature=np.asarray(feat_node, dtype=np.int64),
        threshold=np.asarray(thr_node, dtype=np.float64),
        left=np.asarray(left_node, dtype=np.int64),
        right=np.asarray(right_node, dtype=np.int64),
        value=np.asarray(value_node, dtype=np.float64),
        n_estimation_obs=np.asarray(n_est_node, dtype=np.int64),
        feature_ids=feature_ids,
    )


def _cluster_row_lookup(clusters: np.ndarray) -> tuple[np.ndarray, int]:
    """Factorize cluster labels to contiguous codes 0..C-1."""
    uniq, codes = np.unique(np.asarray(clusters), return_inverse=True)
    return codes, len(uniq)


def _fit_one_tree(args) -> RegressionTree:
    features, target, codes, n_clusters, cfg, seed_seq = args
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    n_sub = int(np.floor(cfg.subsample_fraction * n_clusters))
    n_sub = max(n_sub, 2)
    chosen = rng.choice(n_clusters, size=n_sub, replace=False)
    halves = rng.permutation(n_sub)
    split_clusters = chosen[halves[: n_sub // 2]]
    est_clusters = chosen[halves[n_sub // 2 :]]

    lut = np.zeros(n_clusters, dtype=bool)
    lut[split_clusters] = True
    split_rows = lut[codes]
    lut[:] = False
    lut[est_clusters] = True
    est_rows = lut[codes]

    k = features.shape[1]
    k_sub = int(np.ceil(cfg.feature_fraction * k))
    feats = np.sort(rng.choice(k, size=k_sub, replace=False))

    tree = grow_tree(
        features[np.ix_(split_rows, feats)],
        target[split_rows],
        features[np.ix_(est_rows, feats)],
        target[est_rows],
        cfg.min_leaf,
        feature_ids=feats,
    )
    tree.split_cluster_ids = np.sort(split_clusters)
    tree.estimate_cluster_ids = np.sort(est_clusters)
    return tree


def fit_regression_forest(
    features: np.ndarray,
    target: np.ndarray,
    clusters: np.ndarray,
    cfg: ForestConfig,
    rng: np.random.Generator | int,
    workers: int = 1,
) -> RegressionForest:
    """Fit a cluster-subsampled honest forest.

    Every tree draws ``floor(subsample_fraction * n_clusters)`` clusters
    without replacement and ``ceil(feature_fraction * k)`` features, then
    splits its subsample in half by cluster for honesty. Each tree has its
    own random stream derived up front, so the fit is identical for any
    ``workers`` value.

    Args:
        features: (n, k) covariate matrix.
        target: length-n regression target.
        clusters: length-n cluster labels (factorized internally).
        cfg: forest hyperparameters.
        rng: generator or integer seed for the whole forest.
        workers: process count for tree fitting.
    """
    features = np.asarray(features, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if features.ndim != 2 or len(features) != len(target):
        raise ValidationError("features and target shapes do not match")
    if not np.isfinite(target).all():
        raise ValidationError("non-finite regression target")
    if not np.isfinite(features).all():
        raise ValidationError("non-finite feature value")
    codes, n_clusters = _cluster_row_lookup(clusters)
    if len(codes) != len(target):
        raise ValidationError("clusters and target shapes do not match")
    if n_clusters < 4:
        raise InsufficientDataError(
            f"forest needs at least 4 clusters, got {n_clusters}"
        )
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    seed_seqs = rng.bit_generator.seed_seq.spawn(cfg.n_trees)
    jobs = [(features, target, codes, n_clusters, cfg, ss) for ss in seed_seqs]
    trees = parallel_map(_fit_one_tree, jobs, workers=workers)
    return RegressionForest(trees=trees, config=cfg)
