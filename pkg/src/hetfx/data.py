"""Panel dataset container, CSV I/O, subgroup filters, balance diagnostics.

A dataset is a flat table of observations (individual, period, treatment,
outcome, covariates). The individual id is the cluster key everywhere:
treatment is assigned once per individual, and all resampling and sample
splitting downstream operate on whole individuals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyDatasetError,
    SchemaError,
    UndefinedStatisticError,
    ValidationError,
)
from .util import format_float

_MISSING_TOKENS = {"", "na", "nan", "null", "none", "."}

ARM_CHOICES = ("all", "treated", "control")
BAND_CHOICES = ("any", "zero", "positive-below", "at-or-above")


@dataclass(frozen=True)
class Observation:
    """One row of a panel dataset."""

    individual_id: object
    period: int
    treatment: int
    outcome: float
    covariates: np.ndarray


@dataclass(frozen=True)
class CovariateSet:
    """A named selection of covariate columns (by index)."""

    name: str
    columns: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(set(self.columns)) != len(self.columns):
            raise ConfigError(f"covariate set {self.name!r} repeats a column")


@dataclass(frozen=True)
class SubgroupFilter:
    """Observation filter by treatment arm and an outcome/covariate band.

    ``variable`` is None for the outcome, otherwise a covariate column index.
    ``threshold`` is required for the positive-below and at-or-above bands.
    """

    arm: str = "all"
    band: str = "any"
    threshold: float | None = None
    variable: int | None = None

    def __post_init__(self) -> None:
        if self.arm not in ARM_CHOICES:
            raise ConfigError(f"unknown arm {self.arm!r}, expected one of {ARM_CHOICES}")
        if self.band not in BAND_CHOICES:
            raise ConfigError(f"unknown band {self.band!r}, expected one of {BAND_CHOICES}")
        if self.band in ("positive-below", "at-or-above") and self.threshold is None:
            raise ConfigError(f"band {self.band!r} requires a threshold")


class PanelDataset:
    """Immutable panel of observations keyed by (individual, period).

    Invariants enforced at construction: equal-length columns, at least one
    row, finite outcomes and covariates, binary treatment constant within
    each individual, and unique (individual, period) pairs.
    """

    __slots__ = (
        "individual_id",
        "period",
        "treatment",
        "outcome",
        "covariates",
        "covariate_names",
        "cluster_codes",
        "cluster_ids",
        "_cluster_index",
    )

    def __init__(
        self,
        individual_id: np.ndarray,
        period: np.ndarray,
        treatment: np.ndarray,
        outcome: np.ndarray,
        covariates: np.ndarray,
        covariate_names: Sequence[str],
        validate: bool = True,
    ) -> None:
        self.individual_id = np.asarray(individual_id)
        self.period = np.asarray(period, dtype=np.int64)
        self.treatment = np.asarray(treatment, dtype=np.int8)
        self.outcome = np.asarray(outcome, dtype=np.float64)
        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.ndim != 2:
            covariates = covariates.reshape(len(self.outcome), -1)
        self.covariates = covariates
        self.covariate_names = tuple(covariate_names)
        self.cluster_ids, self.cluster_codes = np.unique(
            self.individual_id, return_inverse=True
        )
        self._cluster_index = None
        if validate:
            self._validate()

    # ------------------------------------------------------------------
    # construction and validation
    # ------------------------------------------------------------------

    def _validate(self) -> None:
        n = len(self.outcome)
        if n == 0:
            raise EmptyDatasetError("dataset has no observations")
        for arr, name in (
            (self.individual_id, "individual_id"),
            (self.period, "period"),
            (self.treatment, "treatment"),
        ):
            if len(arr) != n:
                raise ValidationError(f"column {name} has {len(arr)} rows, expected {n}")
        if self.covariates.shape[0] != n:
            raise ValidationError(
                f"covariates have {self.covariates.shape[0]} rows, expected {n}"
            )
        if self.covariates.shape[1] != len(self.covariate_names):
            raise ValidationError(
                f"{self.covariates.shape[1]} covariate columns but "
                f"{len(self.covariate_names)} names"
            )
        bad = np.flatnonzero(~np.isfinite(self.outcome))
        if bad.size:
            raise ValidationError(f"non-finite outcome at row {bad[0]}")
        bad = np.flatnonzero(~np.isfinite(self.covariates).all(axis=1))
        if bad.size:
            raise ValidationError(f"non-finite covariate at row {bad[0]}")
        bad = np.flatnonzero((self.treatment != 0) & (self.treatment != 1))
        if bad.size:
            raise ValidationError(f"treatment not in {{0, 1}} at row {bad[0]}")
        order, starts, _ = self.cluster_rows()
        d_sorted = self.treatment[order]
        d_min = np.minimum.reduceat(d_sorted, starts)
        d_max = np.maximum.reduceat(d_sorted, starts)
        bad = np.flatnonzero(d_min != d_max)
        if bad.size:
            raise ValidationError(
                f"treatment varies within individual {self.cluster_ids[bad[0]]!r}"
            )
        # unique (individual, period): sort by (cluster, period) and look for
        # adjacent duplicates.
        order2 = np.lexsort((self.period, self.cluster_codes))
        same_cluster = self.cluster_codes[order2][1:] == self.cluster_codes[order2][:-1]
        same_period = self.period[order2][1:] == self.period[order2][:-1]
        dup = np.flatnonzero(same_cluster & same_period)
        if dup.size:
            row = order2[dup[0] + 1]
            raise ValidationError(
                f"duplicate (individual, period) pair "
                f"({self.individual_id[row]!r}, {self.period[row]})"
            )

    @classmethod
    def _unchecked(
        cls,
        individual_id: np.ndarray,
        period: np.ndarray,
        treatment: np.ndarray,
        outcome: np.ndarray,
        covariates: np.ndarray,
        covariate_names: Sequence[str],
    ) -> "PanelDataset":
        """Fast path for internally built data already known to be valid."""
        return cls(
            individual_id, period, treatment, outcome, covariates,
            covariate_names, validate=False,
        )

    # ------------------------------------------------------------------
    # basic accessors
    # ------------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.outcome)

    @property
    def n_individuals(self) -> int:
        return len(self.cluster_ids)

    @property
    def n_periods(self) -> int:
        return len(np.unique(self.period))

    def __getitem__(self, i: int) -> Observation:
        return Observation(
            individual_id=self.individual_id[i],
            period=int(self.period[i]),
            treatment=int(self.treatment[i]),
            outcome=float(self.outcome[i]),
            covariates=self.covariates[i].copy(),
        )

    def cluster_rows(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rows grouped by cluster: (order, block starts, block counts).

        ``order`` is a stable permutation of row indices such that rows of
        cluster code c occupy the block starting at ``starts[c]``.
        """
        if self._cluster_index is None:
            order = np.argsort(self.cluster_codes, kind="stable")
            counts = np.bincount(self.cluster_codes, minlength=self.n_individuals)
            starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
            self._cluster_index = (order, starts, counts)
        return self._cluster_index

    def subset(self, rows: np.ndarray) -> "PanelDataset":
        """Dataset restricted to the given row indices (order preserved)."""
        rows = np.asarray(rows)
        if rows.size == 0:
            raise EmptyDatasetError("subset selects no observations")
        return PanelDataset._unchecked(
            self.individual_id[rows],
            self.period[rows],
            self.treatment[rows],
            self.outcome[rows],
            self.covariates[rows],
            self.covariate_names,
        )

    def cluster_treatment(self) -> np.ndarray:
        """Treatment indicator per cluster code (constant within cluster)."""
        order, starts, _ = self.cluster_rows()
        return self.treatment[order][starts]


# ----------------------------------------------------------------------
# filters and covariate selection
# ----------------------------------------------------------------------


def apply_filter(ds: PanelDataset, f: SubgroupFilter) -> np.ndarray:
    """Row indices (ascending) of observations matching the filter."""
    mask = np.ones(len(ds), dtype=bool)
    if f.arm == "treated":
        mask &= ds.treatment == 1
    elif f.arm == "control":
        mask &= ds.treatment == 0
    if f.band != "any":
        if f.variable is None:
            v = ds.outcome
        else:
            if not 0 <= f.variable < ds.covariates.shape[1]:
                raise IndexError(
                    f"filter variable column {f.variable} out of range "
                    f"(dataset has {ds.covariates.shape[1]} covariates)"
                )
            v = ds.covariates[:, f.variable]
        if f.band == "zero":
            mask &= v == 0
        elif f.band == "positive-below":
            mask &= (v > 0) & (v < f.threshold)
        else:  # at-or-above
            mask &= v >= f.threshold
    return np.flatnonzero(mask)


def select_covariates(ds: PanelDataset, cs: CovariateSet | None) -> np.ndarray:
    """Covariate matrix restricted to the columns of ``cs`` (None: all)."""
    k = ds.covariates.shape[1]
    if cs is None:
        return ds.covariates
    for c in cs.columns:
        if not 0 <= c < k:
            raise IndexError(
                f"covariate set {cs.name!r} references column {c}, "
                f"but the dataset has {k} covariate columns"
            )
    return ds.covariates[:, list(cs.columns)]


# ----------------------------------------------------------------------
# balance diagnostic
# ----------------------------------------------------------------------


def standardized_difference(a: np.ndarray, b: np.ndarray) -> float:
    """Absolute standardized difference in means, in percent.

    Uses population variances (denominator n). A zero pooled variance with
    equal means returns 0; with unequal means it raises, the statistic being
    undefined there.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptyDatasetError("standardized difference needs nonempty groups")
    mean_a, mean_b = a.mean(), b.mean()
    pooled = 0.5 * (a.var() + b.var())
    if pooled == 0.0:
        if mean_a == mean_b:
            return 0.0
        raise UndefinedStatisticError(
            "zero pooled variance with unequal means: standardized difference undefined"
        )
    return float(abs(mean_a - mean_b) / np.sqrt(pooled) * 100.0)


# ----------------------------------------------------------------------
# CSV I/O
# ----------------------------------------------------------------------

_DEFAULT_SCHEMA = {"id": "id", "period": "period", "d": "d", "y": "y"}


def _parse_float(token: str, what: str, row: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ValidationError(f"cannot parse {what} value {token!r} at data row {row}")


def load_panel_csv(
    path: str | Path,
    schema: dict | None = None,
    drop_individuals: Iterable | None = None,
) -> PanelDataset:
    """Load a panel dataset from CSV.

    The file must have a header row. The id, period, treatment, and outcome
    columns are located by ``schema`` (defaults: id, period, d, y); every
    other column is a covariate, unless ``schema["covariates"]`` names an
    explicit list. Missing covariate cells are imputed to 0 and flagged in a
    companion ``<name>_missing`` indicator column appended after the regular
    covariates. Missing values in the four required columns are an error.

    ``drop_individuals`` removes whole individuals by id before validation;
    this is the only row-exclusion mechanism, there is no automatic outlier
    dropping.
    """
    schema = {**_DEFAULT_SCHEMA, **(schema or {})}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: file is empty")
        rows = list(reader)
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")

    col_of = {name: i for i, name in enumerate(header)}
    required = {key: schema[key] for key in ("id", "period", "d", "y")}
    for key, name in required.items():
        if name not in col_of:
            raise SchemaError(f"{path}: missing required column {name!r} (role {key})")
    if "covariates" in schema and schema["covariates"] is not None:
        cov_names = list(schema["covariates"])
        for name in cov_names:
            if name not in col_of:
                raise SchemaError(f"{path}: missing covariate column {name!r}")
    else:
        taken = set(required.values())
        cov_names = [name for name in header if name not in taken]

    n = len(rows)
    ids: list[str] = []
    period = np.empty(n, dtype=np.int64)
    d = np.empty(n, dtype=np.int8)
    y = np.empty(n, dtype=np.float64)
    cov = np.zeros((n, len(cov_names)), dtype=np.float64)
    missing = np.zeros((n, len(cov_names)), dtype=bool)

    id_col = col_of[required["id"]]
    t_col = col_of[required["period"]]
    d_col = col_of[required["d"]]
    y_col = col_of[required["y"]]
    cov_cols = [col_of[name] for name in cov_names]

    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"{path}: data row {i} has {len(row)} fields, expected {len(header)}")
        for col, what in ((id_col, "id"), (t_col, "period"), (d_col, "d"), (y_col, "y")):
            if row[col].strip().lower() in _MISSING_TOKENS:
                raise ValidationError(f"{path}: missing {what} at data row {i}")
        ids.append(row[id_col])
        t_val = _parse_float(row[t_col], "period", i)
        if t_val != int(t_val):
            raise ValidationError(f"{path}: non-integer period {row[t_col]!r} at data row {i}")
        period[i] = int(t_val)
        d_val = _parse_float(row[d_col], "d", i)
        if d_val not in (0.0, 1.0):
            raise ValidationError(f"{path}: treatment not in {{0, 1}} at data row {i}")
        d[i] = int(d_val)
        y[i] = _parse_float(row[y_col], "y", i)
        for j, col in enumerate(cov_cols):
            token = row[col].strip()
            if token.lower() in _MISSING_TOKENS:
                missing[i, j] = True
            else:
                cov[i, j] = _parse_float(token, f"covariate {cov_names[j]!r}", i)

    flagged = [j for j in range(len(cov_names)) if missing[:, j].any()]
    if flagged:
        cov = np.concatenate([cov, missing[:, flagged].astype(np.float64)], axis=1)
        cov_names = cov_names + [f"{cov_names[j]}_missing" for j in flagged]

    id_arr = np.asarray(ids)
    if drop_individuals is not None:
        dropped = {str(u) for u in drop_individuals}
        keep = np.array([str(u) not in dropped for u in id_arr], dtype=bool)
        if not keep.any():
            raise EmptyDatasetError(f"{path}: drop list removes every observation")
        id_arr, period, d, y, cov = (
            id_arr[keep], period[keep], d[keep], y[keep], cov[keep]
        )

    return PanelDataset(id_arr, period, d, y, cov, cov_names)


def write_panel_csv(ds: PanelDataset, path: str | Path) -> None:
    """Write a dataset as CSV, round-tripping float values exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "period", "d", "y", *ds.covariate_names])
        for i in range(len(ds)):
            writer.writerow(
                [
                    ds.individual_id[i],
                    int(ds.period[i]),
                    int(ds.treatment[i]),
                    format_float(ds.outcome[i]),
                    *[format_float(v) for v in ds.covariates[i]],
                ]
            )
