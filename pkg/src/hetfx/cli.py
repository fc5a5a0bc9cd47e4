"""Command-line surface: simulate, score, fit, test, qte-compare, report.

Option values resolve in three layers: built-in defaults, then an INI config
file (a [global] section plus one section per subcommand), then flags; flags
win. Every invocation writes a manifest.json with the resolved options so an
artifact directory can be reproduced exactly. The worker count is the one
option kept out of the manifest: it must never change output bytes, only
wall-clock time.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import functools
import io
import json
import os
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .cate import (
    TreeCvConfig,
    crossfit_cate_forest,
    fit_cate_forest,
    fit_cate_tree,
    fit_local_constant,
    sign_shares,
    smooth_cates,
)
from .data import (
    CovariateSet,
    PanelDataset,
    SubgroupFilter,
    apply_filter,
    load_panel_csv,
    select_covariates,
    write_panel_csv,
)
from .errors import ConfigError, HetfxError, InsufficientDataError, ValidationError
from .figures import curve_figure, edf_figure, qte_figure
from .inference import BootstrapPlan, dominance_battery
from .nuisance import NuisanceFit, cross_fit_nuisances
from .qte import EDF, ks_nesting_test, qte, simulated_distribution
from .report import fmt_number, fmt_pvalue, fmt_share, fmt_stat, render_csv, render_markdown, table
from .score import ate, orthogonal_score, unadjusted_score
from .sim import DgpConfig, generate, ols_interaction_cate, ols_interaction_coefficients, run_monte_carlo
from .trees import ForestConfig
from .util import format_float, seed_sequence, stream_rng

_STRATUM_NAMES = ("zero", "below-median", "at-or-above-median")


# ----------------------------------------------------------------------
# option casting
# ----------------------------------------------------------------------


def _split(raw) -> list[str]:
    """Comma-separated string (or list of them) to a clean token list."""
    items = raw if isinstance(raw, (list, tuple)) else [raw]
    out: list[str] = []
    for item in items:
        out.extend(part.strip() for part in str(item).split(","))
    return [part for part in out if part]


def _to_strs(raw) -> tuple[str, ...]:
    return tuple(_split(raw))


def _to_ints(raw) -> tuple[int, ...]:
    return tuple(int(part) for part in _split(raw))


def _to_floats(raw) -> tuple[float, ...]:
    return tuple(float(part) for part in _split(raw))


def _to_bool(raw) -> bool:
    token = str(raw).strip().lower()
    if token in ("on", "true", "yes", "1"):
        return True
    if token in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {raw!r}")


def _choice(*allowed: str):
    def cast(raw) -> str:
        token = str(raw).strip()
        if token not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}")
        return token

    return cast


_DEFAULT_TAUS = tuple(round(0.05 * i, 2) for i in range(1, 20))


# ----------------------------------------------------------------------
# option tables: name -> (cast, default, help)
# ----------------------------------------------------------------------

_COMMON = {
    "out": (str, None, "output directory (default: $HETFX_OUTDIR or '.')"),
    "seed": (int, 0, "master seed; all randomness streams from it"),
    "workers": (int, 1, "process count for parallel sections (never changes results)"),
}

_DATA = {
    "data": (str, None, "input dataset CSV"),
    "col-id": (str, "id", "individual id column name"),
    "col-period": (str, "period", "period column name"),
    "col-treatment": (str, "d", "0/1 treatment column name"),
    "col-outcome": (str, "y", "outcome column name"),
    "col-covariates": (_to_strs, None, "explicit covariate columns (default: every extra column)"),
    "drop-ids": (_to_strs, None, "individual ids to remove before validation"),
}

_NUIS = {
    "nuisance-trees": (int, 200, "trees per nuisance forest"),
    "nuisance-min-leaf": (int, 50, "minimum leaf size for nuisance forests"),
}

_EST = {
    "estimator": (
        _choice("local-constant", "tree", "forest", "crossfit-forest", "ols"),
        "forest",
        "effect model fit on the orthogonal score",
    ),
    "covariates": (
        str,
        "kitchen-sink",
        "effect-model covariate set: baseline | decent | kitchen-sink | all, "
        "or explicit comma-separated names (nuisance forests always use every column)",
    ),
    "trees": (int, 200, "trees in the effect forest"),
    "min-leaf": (int, 50, "minimum leaf size in the effect forest"),
    "subsample-fraction": (float, 0.5, "cluster fraction subsampled per tree"),
    "feature-fraction": (float, 2.0 / 3.0, "feature fraction drawn per tree"),
    "min-leaf-grid": (_to_ints, (50, 100, 200, 400, 800, 1600), "leaf-size candidates for tree CV"),
    "with-period": (_to_bool, False, "append the period as an extra split feature"),
    "stratify-column": (str, None, "covariate for local-constant strata (default: first)"),
}

_TESTING = {
    "subgroup": (_to_strs, ("all:any",), "subgroup spec arm:band[:threshold[:variable]]; repeatable"),
    "hypothesis": (_choice("h-plus", "h-minus", "both"), "both", "which null's p-values to report"),
    "B": (int, 1999, "bootstrap replicates"),
    "recenter": (_to_bool, True, "re-center replicate statistics at the estimated distribution"),
    "refit": (_to_bool, False, "refit nuisances and the effect model inside every replicate"),
}

_QTE = {
    "taus": (_to_floats, _DEFAULT_TAUS, "quantile grid"),
}

_CURVE = {
    "running": (str, None, "running variable for the smoothed curve: covariate name or 'outcome' (default: first covariate)"),
    "curve-arm": (_choice("all", "treated", "control"), "all", "rows entering the smoothed curve"),
    "truncate-above": (float, None, "drop curve rows with running variable above this cap"),
    "grid-size": (int, 200, "evaluation points for the smoothed curve"),
    "threshold": (float, None, "reference threshold drawn on the curve figure"),
}

_SIMULATE = {
    "dgp": (_to_strs, ("dgp1", "dgp2"), "designs to simulate: dgp1, dgp2, kink (comma-separated)"),
    "n": (_to_ints, (500, 1000), "individuals per draw (comma-separated list)"),
    "reps": (int, 500, "Monte Carlo repetitions (0 skips the rejection-rate table)"),
    "B": (int, 499, "bootstrap replicates inside each repetition"),
    "alpha": (float, 0.05, "rejection level"),
    "emit-data": (_to_bool, False, "also write one dataset and ground-truth CSV per design"),
    "beta": (float, 1.0, "effect slope for dgp1/dgp2"),
    "gamma": (float, 1.0, "baseline slope for dgp1/dgp2"),
    "noise-sd": (float, 4.0, "noise standard deviation for dgp1/dgp2"),
    "p-treat": (float, 0.5, "treatment probability"),
    "threshold": (float, 2000.0, "benefit threshold for the kink design"),
    "knots": (_to_floats, None, "kink transfer knots: benefit,zero-crossing,at-threshold"),
}

_SCORE = {
    "kind": (_choice("orthogonal", "unadjusted"), "orthogonal", "score to build"),
    "nuisances": (str, None, "precomputed nuisance CSV (skips cross-fitting)"),
    "B": (int, 1999, "bootstrap replicates for the effect-mean CI"),
}


def _merge(*tables: dict) -> dict:
    out: dict = {}
    for t in tables:
        out.update(t)
    return out


# ----------------------------------------------------------------------
# resolution: defaults < config file < flags
# ----------------------------------------------------------------------


def _resolve(command: str, args: argparse.Namespace, opts: dict) -> dict:
    cp = None
    if args.config is not None:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read(args.config)
        except configparser.Error as err:
            raise ConfigError(f"cannot parse {args.config}: {err}")
    resolved = {}
    for name, (cast, default, _help) in opts.items():
        raw = getattr(args, name.replace("-", "_"))
        if raw is None and cp is not None:
            for section in (command, "global"):
                if cp.has_option(section, name):
                    raw = cp.get(section, name)
                    break
        if raw is None:
            resolved[name] = default
            continue
        try:
            resolved[name] = cast(raw)
        except (ValueError, TypeError) as err:
            raise ConfigError(f"bad value for --{name}: {raw!r} ({err})")
    return resolved


# ----------------------------------------------------------------------
# stages and artifact helpers
# ----------------------------------------------------------------------

_stage_name = "setup"


def _stage(name: str) -> None:
    global _stage_name
    _stage_name = name


def _outdir(opts: dict) -> Path:
    root = opts["out"] or os.environ.get("HETFX_OUTDIR") or "."
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _json_ready(value):
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    return value


def _write_manifest(outdir: Path, command: str, opts: dict) -> None:
    payload = {"command": command, "version": __version__}
    payload.update(
        {k: _json_ready(v) for k, v in opts.items() if k not in ("out", "workers")}
    )
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    (outdir / "manifest.json").write_text(text)


def _write_csv(path: Path, header: list, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    path.write_text(buf.getvalue())


def _emit_table(outdir: Path, stem: str, tbl) -> None:
    (outdir / f"{stem}.csv").write_text(render_csv(tbl))
    (outdir / f"{stem}.md").write_text(render_markdown(tbl))


def _child_seed(seed: int, label: str) -> int:
    return int(seed_sequence(seed, label).generate_state(1, np.uint64)[0])


# ----------------------------------------------------------------------
# dataset and covariate plumbing
# ----------------------------------------------------------------------


def _load_dataset(opts: dict) -> PanelDataset:
    _stage("load-data")
    if not opts["data"]:
        raise ConfigError("--data is required")
    schema = {
        "id": opts["col-id"],
        "period": opts["col-period"],
        "d": opts["col-treatment"],
        "y": opts["col-outcome"],
    }
    if opts["col-covariates"]:
        schema["covariates"] = list(opts["col-covariates"])
    return load_panel_csv(opts["data"], schema, opts["drop-ids"])


def _covariate_index(ds: PanelDataset, name: str) -> int:
    names = list(ds.covariate_names)
    if name not in names:
        raise ConfigError(
            f"unknown covariate {name!r}; dataset has: {', '.join(names)}"
        )
    return names.index(name)


# generic tiers: growing prefixes of the covariate list
_TIER_SIZES = {"baseline": 2, "decent": 5}


def _covariate_columns(opts: dict, ds: PanelDataset) -> tuple[int, ...] | None:
    spec = opts["covariates"]
    if spec in (None, "all", "kitchen-sink"):
        return None
    k = ds.covariates.shape[1]
    if spec in _TIER_SIZES:
        return tuple(range(min(_TIER_SIZES[spec], k)))
    return tuple(_covariate_index(ds, name) for name in _split(spec))


def _feature_matrix(ds: PanelDataset, columns, with_period: bool) -> np.ndarray:
    if columns is None:
        features = ds.covariates
    else:
        features = select_covariates(ds, CovariateSet("selected", columns))
    if with_period:
        features = np.column_stack([features, ds.period.astype(np.float64)])
    return features


def _feature_names(ds: PanelDataset, columns, with_period: bool) -> list[str]:
    names = list(ds.covariate_names)
    if columns is not None:
        names = [names[c] for c in columns]
    if with_period:
        names.append("period")
    return names


def _narrow_dataset(ds: PanelDataset, columns) -> PanelDataset:
    """Dataset restricted to the selected covariate columns (None: as is)."""
    if columns is None:
        return ds
    return PanelDataset(
        ds.individual_id,
        ds.period,
        ds.treatment,
        ds.outcome,
        select_covariates(ds, CovariateSet("selected", columns)),
        tuple(ds.covariate_names[c] for c in columns),
        validate=False,
    )


def _parse_subgroup(spec: str, ds: PanelDataset) -> SubgroupFilter:
    """arm:band[:threshold[:variable]] with 'outcome' as the default variable."""
    parts = [p.strip() for p in spec.split(":")]
    if len(parts) > 4:
        raise ConfigError(f"subgroup spec {spec!r} has too many fields")
    arm = parts[0] or "all"
    band = parts[1] if len(parts) > 1 and parts[1] else "any"
    threshold = None
    if len(parts) > 2 and parts[2]:
        try:
            threshold = float(parts[2])
        except ValueError:
            raise ConfigError(f"subgroup spec {spec!r}: bad threshold {parts[2]!r}")
    variable = None
    if len(parts) > 3 and parts[3] and parts[3] != "outcome":
        variable = _covariate_index(ds, parts[3])
    return SubgroupFilter(arm=arm, band=band, threshold=threshold, variable=variable)


# ----------------------------------------------------------------------
# estimation pipeline
# ----------------------------------------------------------------------


def _estimate_effects(
    ds: PanelDataset,
    rng: np.random.Generator,
    estimator: str,
    columns,
    with_period: bool,
    stratify_column: int,
    nuis_trees: int,
    nuis_min_leaf: int,
    trees: int,
    min_leaf: int,
    subsample_fraction: float,
    feature_fraction: float,
    min_leaf_grid: tuple,
    workers: int = 1,
) -> np.ndarray:
    """Per-row effect estimates from the full pipeline on one dataset.

    Serves both the point fit and, via functools.partial, the refit-per-
    replicate pipeline of the bootstrap tests; every random stage draws from
    ``rng`` in a fixed order.
    """
    if estimator == "ols":
        return ols_interaction_cate(_narrow_dataset(ds, columns)).values
    if estimator == "local-constant":
        model, estimates = fit_local_constant(ds, column=stratify_column)
        return estimates.values
    features = _feature_matrix(ds, columns, with_period)
    nf = cross_fit_nuisances(
        ds,
        None,
        ForestConfig(n_trees=nuis_trees, min_leaf=nuis_min_leaf),
        rng,
        workers=workers,
    )
    sv = orthogonal_score(ds, nf)
    if estimator == "tree":
        cfg = TreeCvConfig(min_leaf_grid=tuple(min_leaf_grid))
        _model, estimates = fit_cate_tree(features, sv.values, ds.individual_id, cfg, rng)
        return estimates.values
    cfg = ForestConfig(
        n_trees=trees,
        min_leaf=min_leaf,
        subsample_fraction=subsample_fraction,
        feature_fraction=feature_fraction,
    )
    if estimator == "forest":
        _model, estimates = fit_cate_forest(
            features, sv.values, ds.individual_id, cfg, rng, workers=workers
        )
        return estimates.values
    _models, estimates = crossfit_cate_forest(
        features, sv.values, ds.individual_id, nf.fold, cfg, rng, workers=workers
    )
    return estimates.values


def _pipeline_kwargs(opts: dict, ds: PanelDataset) -> dict:
    stratify = 0
    if opts.get("stratify-column"):
        stratify = _covariate_index(ds, opts["stratify-column"])
    return {
        "estimator": opts["estimator"],
        "columns": _covariate_columns(opts, ds),
        "with_period": opts["with-period"],
        "stratify_column": stratify,
        "nuis_trees": opts["nuisance-trees"],
        "nuis_min_leaf": opts["nuisance-min-leaf"],
        "trees": opts["trees"],
        "min_leaf": opts["min-leaf"],
        "subsample_fraction": opts["subsample-fraction"],
        "feature_fraction": opts["feature-fraction"],
        "min_leaf_grid": tuple(opts["min-leaf-grid"]),
    }


def _refit_pipeline(opts: dict, ds: PanelDataset):
    # replicates run single-threaded; the bootstrap layer parallelizes them
    return functools.partial(_estimate_effects, workers=1, **_pipeline_kwargs(opts, ds))


def _fit_nuisances(ds: PanelDataset, opts: dict, seed: int) -> NuisanceFit:
    _stage("cross-fit-nuisances")
    cfg = ForestConfig(n_trees=opts["nuisance-trees"], min_leaf=opts["nuisance-min-leaf"])
    return cross_fit_nuisances(
        ds, None, cfg, stream_rng(seed, "nuisance"), workers=opts["workers"]
    )


def _point_fit(ds: PanelDataset, opts: dict, seed: int, nf=None, sv=None) -> SimpleNamespace:
    """Fit the chosen effect model once, keeping intermediates for artifacts."""
    out = SimpleNamespace(nf=nf, sv=sv, model=None, cates=None, text="")
    estimator = opts["estimator"]
    kw = _pipeline_kwargs(opts, ds)
    if estimator == "ols":
        _stage("fit-estimator")
        narrowed = _narrow_dataset(ds, kw["columns"])
        coef = ols_interaction_coefficients(narrowed)
        out.cates = ols_interaction_cate(narrowed).values
        out.text = _ols_text(narrowed, coef)
        return out
    if estimator == "local-constant":
        _stage("fit-estimator")
        out.model, estimates = fit_local_constant(ds, column=kw["stratify_column"])
        out.cates = estimates.values
        out.text = _local_constant_text(out.model)
        return out
    if out.nf is None:
        out.nf = _fit_nuisances(ds, opts, seed)
    if out.sv is None:
        _stage("build-score")
        out.sv = orthogonal_score(ds, out.nf)
    _stage("fit-estimator")
    features = _feature_matrix(ds, kw["columns"], kw["with_period"])
    names = _feature_names(ds, kw["columns"], kw["with_period"])
    rng = stream_rng(seed, "estimator")
    if estimator == "tree":
        cfg = TreeCvConfig(min_leaf_grid=kw["min_leaf_grid"])
        out.model, estimates = fit_cate_tree(features, out.sv.values, ds.individual_id, cfg, rng)
        out.cates = estimates.values
        out.text = _tree_text(out.model, names)
        return out
    cfg = ForestConfig(
        n_trees=kw["trees"],
        min_leaf=kw["min_leaf"],
        subsample_fraction=kw["subsample_fraction"],
        feature_fraction=kw["feature_fraction"],
    )
    if estimator == "forest":
        out.model, estimates = fit_cate_forest(
            features, out.sv.values, ds.individual_id, cfg, rng, workers=opts["workers"]
        )
        header = "honest forest on the orthogonal score"
    else:
        out.model, estimates = crossfit_cate_forest(
            features, out.sv.values, ds.individual_id, out.nf.fold, cfg, rng,
            workers=opts["workers"],
        )
        header = "fold-swapped honest forests on the orthogonal score"
    out.cates = estimates.values
    out.text = "\n".join(
        [
            header,
            f"trees: {cfg.n_trees}",
            f"min leaf: {cfg.min_leaf}",
            f"subsample fraction: {format_float(cfg.subsample_fraction)}",
            f"feature fraction: {format_float(cfg.feature_fraction)}",
            f"features: {', '.join(names)}",
            "",
        ]
    )
    return out


# ----------------------------------------------------------------------
# model summaries
# ----------------------------------------------------------------------


def _tree_text(tree, names: list[str]) -> str:
    lines = []
    if getattr(tree, "cv_min_leaf", None) is not None:
        lines.append(f"cross-validated min leaf: {tree.cv_min_leaf}")
        cand = ", ".join(
            "root" if c is None else str(c) for c in getattr(tree, "cv_candidates", ())
        )
        if cand:
            lines.append(f"candidates: {cand}")
        lines.append("")

    def walk(node: int, depth: int) -> None:
        pad = "  " * depth
        if tree.feature[node] < 0:
            lines.append(
                f"{pad}leaf: {format_float(tree.value[node])}"
                f" (n={int(tree.n_estimation_obs[node])})"
            )
            return
        f = int(tree.feature[node])
        name = names[f] if f < len(names) else f"feature {f}"
        thr = format_float(tree.threshold[node])
        lines.append(f"{pad}if {name} <= {thr}:")
        walk(int(tree.left[node]), depth + 1)
        lines.append(f"{pad}else:")
        walk(int(tree.right[node]), depth + 1)

    walk(0, 0)
    lines.append("")
    return "\n".join(lines)


def _local_constant_text(model) -> str:
    lines = [
        f"stratified difference in means on '{model.column_name}'",
        f"positive-value median: {format_float(model.positive_median)}",
        "",
        "effect by stratum x period (treated minus control mean):",
    ]
    header = ["stratum".ljust(22)] + [f"t={int(t)}".rjust(12) for t in model.periods]
    lines.append("".join(header))
    for s, label in enumerate(_STRATUM_NAMES):
        cells = [f"{model.delta[s, j]:.4f}".rjust(12) for j in range(len(model.periods))]
        lines.append(label.ljust(22) + "".join(cells))
    lines.append("")
    return "\n".join(lines)


def _ols_text(ds: PanelDataset, coef: np.ndarray) -> str:
    name = ds.covariate_names[0]
    rows = [
        ("intercept", coef[0]),
        ("treatment", coef[1]),
        (name, coef[2]),
        (f"treatment x {name}", coef[3]),
    ]
    lines = ["interaction regression coefficients:"]
    for label, value in rows:
        lines.append(f"  {label}: {format_float(value)}")
    lines.append("")
    return "\n".join(lines)


# ----------------------------------------------------------------------
# shared emission blocks
# ----------------------------------------------------------------------


def _write_cates(outdir: Path, ds: PanelDataset, cates: np.ndarray) -> None:
    rows = (
        [ds.individual_id[i], int(ds.period[i]), format_float(cates[i])]
        for i in range(len(ds))
    )
    _write_csv(outdir / "cates.csv", ["individual_id", "period", "cate"], rows)


def _shares_table(cates: np.ndarray):
    s = sign_shares(cates)
    return table(
        "Estimated effect signs",
        ["n", "% negative", "% positive"],
        [("all", [len(cates), fmt_share(s.pct_negative), fmt_share(s.pct_positive)])],
        "exact zeros count as positive",
    )


def _ate_table(sv, opts: dict, seed: int):
    _stage("average-effect")
    plan = BootstrapPlan(
        n_replicates=opts["B"], seed=_child_seed(seed, "ate"), workers=opts["workers"]
    )
    est = ate(sv, plan)
    cells = [
        fmt_number(est.estimate),
        fmt_number(est.ci_low),
        fmt_number(est.ci_high),
        len(sv.values),
    ]
    return table(
        "Average treatment effect (score mean)",
        ["estimate", "ci low", "ci high", "n"],
        [(sv.kind, cells)],
        f"95% cluster bootstrap interval, B={opts['B']}",
    )


def _run_tests(ds: PanelDataset, opts: dict, seed: int, point) -> tuple:
    _stage("dominance-tests")
    subgroups = {}
    for spec in opts["subgroup"]:
        idx = apply_filter(ds, _parse_subgroup(spec, ds))
        if idx.size == 0:
            raise InsufficientDataError(f"subgroup {spec!r} matches no observations")
        subgroups[spec] = idx
    pipeline = _refit_pipeline(opts, ds) if opts["refit"] else point.cates
    plan = BootstrapPlan(
        n_replicates=opts["B"], seed=_child_seed(seed, "tests"), workers=opts["workers"]
    )
    results = dominance_battery(pipeline, ds, subgroups, plan, recenter=opts["recenter"])
    columns = ["n", "% negative", "% positive"]
    show_plus = opts["hypothesis"] in ("h-plus", "both")
    show_minus = opts["hypothesis"] in ("h-minus", "both")
    if show_plus:
        columns.append("p: all effects >= 0")
    if show_minus:
        columns.append("p: all effects <= 0")
    rows = []
    dropped = 0
    for name, res in results.items():
        cells = [
            res.n_obs,
            fmt_share(100.0 * res.d_plus),
            fmt_share(100.0 * res.d_minus),
        ]
        if show_plus:
            cells.append(fmt_pvalue(res.p_plus))
        if show_minus:
            cells.append(fmt_pvalue(res.p_minus))
        rows.append((name, cells))
        dropped = max(dropped, res.n_dropped)
    mode = "re-centered" if opts["recenter"] else "uncentered"
    fit_mode = "full refit per replicate" if opts["refit"] else "fixed estimates resampled"
    note = f"B={opts['B']} cluster bootstrap replicates, {mode}, {fit_mode}"
    if dropped:
        note += f"; up to {dropped} replicates dropped"
    return results, table("Sign-dominance tests", columns, rows, note)


def _run_qte(ds: PanelDataset, opts: dict, seed: int, point) -> tuple:
    _stage("quantile-effects")
    taus = np.asarray(opts["taus"], dtype=np.float64)
    if taus.size == 0 or (taus <= 0).any() or (taus >= 1).any():
        raise ConfigError("taus must lie strictly between 0 and 1")
    curve = qte(ds, taus)
    _stage("nesting-test")
    pipeline = _refit_pipeline(opts, ds) if opts["refit"] else None
    plan = BootstrapPlan(
        n_replicates=opts["B"], seed=_child_seed(seed, "nesting"), workers=opts["workers"]
    )
    ks = ks_nesting_test(ds, point.cates, plan, pipeline=pipeline)
    rows = [
        ("treated", [fmt_stat(ks.ks_treated), fmt_pvalue(ks.p_treated)]),
        ("control", [fmt_stat(ks.ks_control), fmt_pvalue(ks.p_control)]),
        ("joint", [fmt_stat(ks.ks_joint), fmt_pvalue(ks.p_joint)]),
    ]
    note = f"actual vs simulated outcome distributions, B={opts['B']}"
    if ks.n_dropped:
        note += f"; {ks.n_dropped} replicates dropped"
    tbl = table("Distribution nesting tests", ["KS statistic", "p-value"], rows, note)
    return curve, ks, tbl


def _write_qte_csv(outdir: Path, curve) -> None:
    rows = (
        [
            format_float(curve.taus[i]),
            format_float(curve.q_treated[i]),
            format_float(curve.q_control[i]),
            format_float(curve.values[i]),
        ]
        for i in range(len(curve.taus))
    )
    _write_csv(outdir / "qte.csv", ["tau", "q_treated", "q_control", "qte"], rows)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def _cmd_simulate(opts: dict) -> None:
    outdir = _outdir(opts)
    seed = opts["seed"]
    dgps = opts["dgp"]
    if opts["reps"] == 0 and not opts["emit-data"]:
        raise ConfigError("reps=0 with emit-data off produces nothing")

    def dgp_config(kind: str, n: int, cfg_seed: int) -> DgpConfig:
        kwargs = dict(
            kind=kind,
            n=n,
            beta=opts["beta"],
            gamma=opts["gamma"],
            noise_sd=opts["noise-sd"],
            p_treat=opts["p-treat"],
            threshold=opts["threshold"],
            seed=cfg_seed,
        )
        if opts["knots"] is not None:
            kwargs["kink_knots"] = tuple(opts["knots"])
        return DgpConfig(**kwargs)

    if opts["reps"] > 0:
        if "kink" in dgps:
            raise ConfigError(
                "rejection-rate simulation needs the single-covariate designs (dgp1, dgp2)"
            )
        _stage("monte-carlo")
        columns = []
        for n in opts["n"]:
            columns += [f"N={n} re-centered", f"N={n} uncentered"]
        rows = []
        for kind in dgps:
            cells = [
                run_monte_carlo(
                    dgp_config(kind, n, seed),
                    reps=opts["reps"],
                    n_boot=opts["B"],
                    seed=seed,
                    workers=opts["workers"],
                    alpha=opts["alpha"],
                )
                for n in opts["n"]
            ]
            plus: list = []
            minus: list = []
            for cell in cells:
                plus += [fmt_stat(cell.rate_plus_recentered), fmt_stat(cell.rate_plus_uncentered)]
                minus += [fmt_stat(cell.rate_minus_recentered), fmt_stat(cell.rate_minus_uncentered)]
            rows.append((f"{kind}: all effects >= 0", plus))
            rows.append((f"{kind}: all effects <= 0", minus))
        note = (
            f"rejection rates over {opts['reps']} repetitions, B={opts['B']}, "
            f"alpha={opts['alpha']}; interaction OLS refit inside every replicate"
        )
        _emit_table(outdir, "rejection-rates", table("Dominance test rejection rates", columns, rows, note))

    if opts["emit-data"]:
        _stage("write-datasets")
        for kind in dgps:
            for n in opts["n"]:
                cfg = dgp_config(kind, n, _child_seed(seed, f"data-{kind}-{n}"))
                ds, truth = generate(cfg)
                write_panel_csv(ds, outdir / f"data-{kind}-n{n}.csv")
                rows = (
                    [ds.individual_id[i], int(ds.period[i]), format_float(truth.true_cate[i])]
                    for i in range(len(ds))
                )
                _write_csv(
                    outdir / f"truth-{kind}-n{n}.csv",
                    ["individual_id", "period", "true_cate"],
                    rows,
                )
    _write_manifest(outdir, "simulate", opts)


def _read_nuisance_csv(path: str, ds: PanelDataset) -> NuisanceFit:
    _stage("load-nuisances")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    required = ["individual_id", "period", "mu1_hat", "mu0_hat", "p_hat", "fold"]
    if header is None or any(name not in header for name in required):
        raise ValidationError(f"{path}: expected columns {', '.join(required)}")
    if len(rows) != len(ds):
        raise ValidationError(
            f"{path}: {len(rows)} rows for a dataset with {len(ds)} observations"
        )
    col = {name: header.index(name) for name in required}
    mu1 = np.empty(len(ds))
    mu0 = np.empty(len(ds))
    p = np.empty(len(ds))
    fold = np.empty(len(ds), dtype=np.int8)
    for i, row in enumerate(rows):
        if row[col["individual_id"]] != str(ds.individual_id[i]) or int(
            row[col["period"]]
        ) != int(ds.period[i]):
            raise ValidationError(f"{path}: row {i} does not match the dataset ordering")
        mu1[i] = float(row[col["mu1_hat"]])
        mu0[i] = float(row[col["mu0_hat"]])
        p[i] = float(row[col["p_hat"]])
        fold[i] = int(row[col["fold"]])
    return NuisanceFit(mu1_hat=mu1, mu0_hat=mu0, p_hat=p, fold=fold)


def _write_nuisance_csv(outdir: Path, ds: PanelDataset, nf: NuisanceFit) -> None:
    rows = (
        [
            ds.individual_id[i],
            int(ds.period[i]),
            format_float(nf.mu1_hat[i]),
            format_float(nf.mu0_hat[i]),
            format_float(nf.p_hat[i]),
            int(nf.fold[i]),
        ]
        for i in range(len(ds))
    )
    _write_csv(
        outdir / "nuisances.csv",
        ["individual_id", "period", "mu1_hat", "mu0_hat", "p_hat", "fold"],
        rows,
    )


def _cmd_score(opts: dict) -> None:
    outdir = _outdir(opts)
    ds = _load_dataset(opts)
    seed = opts["seed"]
    if opts["kind"] == "unadjusted":
        _stage("build-score")
        sv = unadjusted_score(ds)
    else:
        if opts["nuisances"]:
            nf = _read_nuisance_csv(opts["nuisances"], ds)
        else:
            nf = _fit_nuisances(ds, opts, seed)
            _write_nuisance_csv(outdir, ds, nf)
        _stage("build-score")
        sv = orthogonal_score(ds, nf)
    rows = (
        [ds.individual_id[i], int(ds.period[i]), format_float(sv.values[i])]
        for i in range(len(ds))
    )
    _write_csv(outdir / "scores.csv", ["individual_id", "period", "score"], rows)
    _emit_table(outdir, "ate", _ate_table(sv, opts, seed))
    _write_manifest(outdir, "score", opts)


def _cmd_fit(opts: dict) -> None:
    outdir = _outdir(opts)
    ds = _load_dataset(opts)
    point = _point_fit(ds, opts, opts["seed"])
    _stage("write-artifacts")
    _write_cates(outdir, ds, point.cates)
    _emit_table(outdir, "shares", _shares_table(point.cates))
    (outdir / "model.txt").write_text(point.text)
    _write_manifest(outdir, "fit", opts)


def _cmd_test(opts: dict) -> None:
    outdir = _outdir(opts)
    ds = _load_dataset(opts)
    point = _point_fit(ds, opts, opts["seed"])
    _results, tbl = _run_tests(ds, opts, opts["seed"], point)
    _stage("write-artifacts")
    _emit_table(outdir, "tests", tbl)
    _write_manifest(outdir, "test", opts)


def _cmd_qte_compare(opts: dict) -> None:
    outdir = _outdir(opts)
    ds = _load_dataset(opts)
    point = _point_fit(ds, opts, opts["seed"])
    curve, _ks, tbl = _run_qte(ds, opts, opts["seed"], point)
    _stage("write-artifacts")
    _write_qte_csv(outdir, curve)
    _emit_table(outdir, "ks", tbl)
    _write_manifest(outdir, "qte-compare", opts)


def _cmd_report(opts: dict) -> None:
    outdir = _outdir(opts)
    ds = _load_dataset(opts)
    seed = opts["seed"]
    nf = _fit_nuisances(ds, opts, seed)
    _stage("build-score")
    sv = orthogonal_score(ds, nf)
    point = _point_fit(ds, opts, seed, nf=nf, sv=sv)
    ate_tbl = _ate_table(sv, opts, seed)
    shares_tbl = _shares_table(point.cates)
    _results, tests_tbl = _run_tests(ds, opts, seed, point)
    qcurve, _ks, ks_tbl = _run_qte(ds, opts, seed, point)

    _stage("effect-curve")
    running = opts["running"]
    if running in (None, "", "outcome"):
        if running == "outcome" or ds.covariates.shape[1] == 0:
            run_name, run_values = "outcome", ds.outcome
        else:
            run_name, run_values = ds.covariate_names[0], ds.covariates[:, 0]
    else:
        idx_col = _covariate_index(ds, running)
        run_name, run_values = running, ds.covariates[:, idx_col]
    rows = apply_filter(ds, SubgroupFilter(arm=opts["curve-arm"]))
    plan = BootstrapPlan(
        n_replicates=opts["B"], seed=_child_seed(seed, "curve"), workers=opts["workers"]
    )
    curve = smooth_cates(
        point.cates,
        run_values,
        ds.individual_id,
        idx=rows,
        plan=plan,
        truncate_above=opts["truncate-above"],
        grid_size=opts["grid-size"],
    )

    _stage("write-artifacts")
    _write_cates(outdir, ds, point.cates)
    (outdir / "model.txt").write_text(point.text)
    for stem, tbl in (
        ("ate", ate_tbl),
        ("shares", shares_tbl),
        ("tests", tests_tbl),
        ("ks", ks_tbl),
    ):
        _emit_table(outdir, stem, tbl)
    _write_qte_csv(outdir, qcurve)
    curve_rows = (
        [
            format_float(curve.grid[i]),
            format_float(curve.estimate[i]),
            format_float(curve.ci_low[i]),
            format_float(curve.ci_high[i]),
        ]
        for i in range(len(curve.grid))
    )
    _write_csv(
        outdir / "curve.csv", ["grid", "estimate", "ci_low", "ci_high"], curve_rows
    )

    _stage("figures")
    curve_figure(
        curve,
        str(outdir / "curve.png"),
        title="Smoothed conditional effects",
        xlabel=run_name,
        threshold=opts["threshold"],
    )
    qte_figure(qcurve, str(outdir / "qte.png"))
    for arm, arm_name in ((1, "treated"), (0, "control")):
        actual = EDF.from_values(ds.outcome[ds.treatment == arm])
        simulated = simulated_distribution(ds, point.cates, arm=arm)
        edf_figure(
            actual,
            simulated,
            str(outdir / f"edf-{arm_name}.png"),
            title=f"{arm_name.capitalize()} outcomes: actual vs simulated",
        )

    sections = [
        "# Treatment effect report",
        "",
        f"dataset: `{opts['data']}` ({len(ds)} observations, "
        f"{len(ds.cluster_ids)} individuals)",
        f"estimator: {opts['estimator']}",
        "",
        render_markdown(ate_tbl),
        render_markdown(shares_tbl),
        render_markdown(tests_tbl),
        render_markdown(ks_tbl),
        "## Figures",
        "",
        "![smoothed conditional effects](curve.png)",
        "",
        "![quantile treatment effects](qte.png)",
        "",
        "![treated outcome distributions](edf-treated.png)",
        "",
        "![control outcome distributions](edf-control.png)",
        "",
    ]
    (outdir / "report.md").write_text("\n".join(sections))
    _write_manifest(outdir, "report", opts)


# ----------------------------------------------------------------------
# parser assembly and entry point
# ----------------------------------------------------------------------

_SPECS: dict = {
    "simulate": (
        _merge(_COMMON, _SIMULATE),
        _cmd_simulate,
        "draw synthetic designs and tabulate dominance-test rejection rates",
    ),
    "score": (
        _merge(_COMMON, _DATA, _NUIS, _SCORE),
        _cmd_score,
        "cross-fit nuisances and write the per-observation score",
    ),
    "fit": (
        _merge(_COMMON, _DATA, _NUIS, _EST),
        _cmd_fit,
        "estimate conditional effects and write them as CSV",
    ),
    "test": (
        _merge(_COMMON, _DATA, _NUIS, _EST, _TESTING),
        _cmd_test,
        "run sign-dominance bootstrap tests on subgroups",
    ),
    "qte-compare": (
        _merge(
            _COMMON, _DATA, _NUIS, _EST,
            {"B": _TESTING["B"], "refit": _TESTING["refit"]},
            _QTE,
        ),
        _cmd_qte_compare,
        "quantile treatment effects and distribution nesting tests",
    ),
    "report": (
        _merge(_COMMON, _DATA, _NUIS, _EST, _TESTING, _QTE, _CURVE),
        _cmd_report,
        "full pipeline: tables, curve data, and figures in one directory",
    ),
}

_REPEATABLE = {"subgroup"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetfx",
        description="conditional treatment effect estimation and testing",
    )
    parser.add_argument("--version", action="version", version=f"hetfx {__version__}")
    sub = parser.add_subparsers(dest="command")
    for name, (opts, _runner, help_text) in _SPECS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None, help="INI config file")
        for opt, (_cast, default, opt_help) in opts.items():
            kwargs = {"default": None, "help": f"{opt_help} (default: {default})"}
            if opt in _REPEATABLE:
                kwargs["action"] = "append"
            sp.add_argument(f"--{opt}", **kwargs)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if not args.command:
        _build_parser().print_help(sys.stderr)
        return 2
    opts_spec, runner, _help = _SPECS[args.command]
    _stage("configure")
    opts = None
    try:
        opts = _resolve(args.command, args, opts_spec)
        runner(opts)
    except (HetfxError, OSError) as err:
        if isinstance(err, HetfxError):
            module = type(err).__module__.rsplit(".", 1)[-1]
            label = f"{module}.{type(err).__name__}"
        else:
            label = type(err).__name__
        print(
            f"hetfx {args.command}: [{_stage_name}] {label}: {err}",
            file=sys.stderr,
        )
        if opts is not None:
            context = {k: _json_ready(v) for k, v in opts.items()}
            print(f"  options: {json.dumps(context, sort_keys=True)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
