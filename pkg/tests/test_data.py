"""Dataset container, CSV loader, filters, and balance diagnostics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetfx.data import (
    CovariateSet,
    PanelDataset,
    SubgroupFilter,
    apply_filter,
    load_panel_csv,
    select_covariates,
    standardized_difference,
    write_panel_csv,
)
from hetfx.errors import (
    ConfigError,
    EmptyDatasetError,
    SchemaError,
    UndefinedStatisticError,
    ValidationError,
)

from conftest import build_panel


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


BASIC_CSV = (
    "id,period,d,y,x\n"
    "a,1,1,1.5,0.2\n"
    "a,2,1,2.5,0.3\n"
    "b,1,0,0.5,0.4\n"
    "b,2,0,1.0,0.1\n"
)


# ----------------------------------------------------------------------
# loader
# ----------------------------------------------------------------------


def test_load_basic_panel(tmp_path):
    ds = load_panel_csv(_write(tmp_path, BASIC_CSV))
    assert len(ds) == 4
    assert ds.n_individuals == 2
    assert ds.n_periods == 2
    assert ds.covariate_names == ("x",)
    assert np.array_equal(ds.treatment, [1, 1, 0, 0])
    assert ds.outcome[2] == 0.5


def test_load_with_schema_mapping(tmp_path):
    text = "unit,t,treat,earnings,age\nu1,1,0,10,30\nu2,1,1,20,40\n"
    schema = {"id": "unit", "period": "t", "d": "treat", "y": "earnings"}
    ds = load_panel_csv(_write(tmp_path, text), schema)
    assert ds.covariate_names == ("age",)
    assert np.array_equal(ds.outcome, [10.0, 20.0])


def test_load_missing_required_column_names_it(tmp_path):
    text = "id,period,d\nu,1,0\n"
    with pytest.raises(SchemaError, match="y"):
        load_panel_csv(_write(tmp_path, text))


def test_load_non_binary_treatment_reports_row(tmp_path):
    text = "id,period,d,y\na,1,2,1.0\n"
    with pytest.raises(ValidationError, match="row 0"):
        load_panel_csv(_write(tmp_path, text))


def test_load_treatment_varying_within_individual_names_it(tmp_path):
    text = "id,period,d,y\n7,1,0,1.0\n7,2,1,2.0\n8,1,1,0.0\n"
    with pytest.raises(ValidationError, match="7"):
        load_panel_csv(_write(tmp_path, text))


def test_load_header_only_file_is_empty_dataset(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_panel_csv(_write(tmp_path, "id,period,d,y\n"))


def test_load_duplicate_individual_period_rejected(tmp_path):
    text = "id,period,d,y\na,1,1,1.0\na,1,1,2.0\n"
    with pytest.raises(ValidationError, match="duplicate"):
        load_panel_csv(_write(tmp_path, text))


def test_missing_covariate_imputed_and_flagged(tmp_path):
    text = "id,period,d,y,x1,x2\na,1,1,1.0,,3.0\nb,1,0,2.0,5.0,4.0\n"
    ds = load_panel_csv(_write(tmp_path, text))
    assert ds.covariate_names == ("x1", "x2", "x1_missing")
    assert ds.covariates[0, 0] == 0.0
    assert ds.covariates[0, 2] == 1.0
    assert ds.covariates[1, 0] == 5.0
    assert ds.covariates[1, 2] == 0.0


def test_missing_outcome_is_an_error(tmp_path):
    text = "id,period,d,y\na,1,1,\nb,1,0,2.0\n"
    with pytest.raises(ValidationError, match="missing y"):
        load_panel_csv(_write(tmp_path, text))


def test_drop_individuals_removes_whole_units(tmp_path):
    ds = load_panel_csv(_write(tmp_path, BASIC_CSV), drop_individuals=["a"])
    assert ds.n_individuals == 1
    assert set(ds.individual_id) == {"b"}


def test_drop_everything_is_an_error(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_panel_csv(_write(tmp_path, BASIC_CSV), drop_individuals=["a", "b"])


def test_write_then_load_round_trips_exactly(tmp_path):
    ds = build_panel(n_individuals=9, n_periods=3, seed=4, covariate_names=("x", "z"))
    path = tmp_path / "round.csv"
    write_panel_csv(ds, path)
    back = load_panel_csv(path)
    assert np.array_equal(back.outcome, ds.outcome)
    assert np.array_equal(back.covariates, ds.covariates)
    assert np.array_equal(back.treatment, ds.treatment)
    assert np.array_equal(back.period, ds.period)


# ----------------------------------------------------------------------
# container invariants
# ----------------------------------------------------------------------


def test_panel_rejects_nonfinite_outcome():
    with pytest.raises(ValidationError, match="non-finite outcome"):
        build_panel(n_individuals=4, outcome=[1.0, np.nan, 0.0, 2.0])


def test_panel_rejects_empty():
    with pytest.raises(EmptyDatasetError):
        PanelDataset(
            np.array([], dtype=np.int64),
            np.array([], dtype=np.int64),
            np.array([], dtype=np.int8),
            np.array([], dtype=np.float64),
            np.empty((0, 1)),
            ("x",),
        )


def test_observation_accessor():
    ds = build_panel(n_individuals=3, seed=1)
    obs = ds[1]
    assert obs.individual_id == ds.individual_id[1]
    assert obs.outcome == ds.outcome[1]


def test_cluster_rows_partition_all_rows():
    ds = build_panel(n_individuals=7, n_periods=3, seed=2)
    order, starts, counts = ds.cluster_rows()
    assert sorted(order.tolist()) == list(range(len(ds)))
    assert counts.sum() == len(ds)
    for c in range(ds.n_individuals):
        block = order[starts[c] : starts[c] + counts[c]]
        assert (ds.cluster_codes[block] == c).all()


def test_cluster_treatment_matches_rows():
    ds = build_panel(n_individuals=8, n_periods=2, seed=3)
    per_cluster = ds.cluster_treatment()
    for i in range(len(ds)):
        assert per_cluster[ds.cluster_codes[i]] == ds.treatment[i]


# ----------------------------------------------------------------------
# filters and covariate sets
# ----------------------------------------------------------------------


def test_filter_all_any_is_identity():
    ds = build_panel(n_individuals=6, seed=5)
    assert np.array_equal(apply_filter(ds, SubgroupFilter()), np.arange(len(ds)))


def test_filter_control_zero_on_all_treated_is_empty():
    ds = build_panel(
        n_individuals=4,
        treatment=[1, 1, 1, 1],
        outcome=[0.0, 0.0, 1.0, 2.0],
    )
    idx = apply_filter(ds, SubgroupFilter(arm="control", band="zero"))
    assert idx.size == 0


def test_filter_positive_below_matches_enumeration():
    y = np.array([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    d = np.array([0, 0, 0, 1, 0, 0])
    ds = build_panel(n_individuals=6, treatment=d, outcome=y)
    idx = apply_filter(
        ds, SubgroupFilter(arm="control", band="positive-below", threshold=4.0)
    )
    expected = [i for i in range(6) if d[i] == 0 and 0 < y[i] < 4.0]
    assert idx.tolist() == expected


def test_filter_at_or_above_on_covariate():
    ds = build_panel(
        n_individuals=5,
        covariates=np.array([[0.0], [1.0], [2.0], [3.0], [4.0]]),
        outcome=np.zeros(5),
    )
    idx = apply_filter(
        ds, SubgroupFilter(band="at-or-above", threshold=2.0, variable=0)
    )
    assert idx.tolist() == [2, 3, 4]


def test_filter_validation():
    with pytest.raises(ConfigError):
        SubgroupFilter(arm="bystander")
    with pytest.raises(ConfigError):
        SubgroupFilter(band="positive-below")  # threshold required


def test_covariate_set_selection_and_errors():
    ds = build_panel(n_individuals=4, covariate_names=("a", "b", "c"), seed=6)
    sub = select_covariates(ds, CovariateSet("pair", (2, 0)))
    assert np.array_equal(sub[:, 0], ds.covariates[:, 2])
    assert np.array_equal(sub[:, 1], ds.covariates[:, 0])
    assert select_covariates(ds, None) is ds.covariates
    with pytest.raises(ConfigError):
        CovariateSet("dup", (1, 1))
    with pytest.raises(IndexError):
        select_covariates(ds, CovariateSet("oob", (5,)))


# ----------------------------------------------------------------------
# standardized difference
# ----------------------------------------------------------------------


def test_standardized_difference_identical_samples():
    assert standardized_difference((1, 2, 3), (1, 2, 3)) == 0.0


def test_standardized_difference_hand_value():
    # means 1 vs 0, population variances 1 and 1 -> |1-0|/1 * 100
    assert standardized_difference((2.0, 0.0), (1.0, -1.0)) == pytest.approx(100.0)


def test_standardized_difference_undefined():
    with pytest.raises(UndefinedStatisticError):
        standardized_difference((1.0, 1.0), (2.0, 2.0))
    with pytest.raises(EmptyDatasetError):
        standardized_difference((), (1.0,))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_standardized_difference_matches_two_pass_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(2.0, 1.5, size=40)
    b = rng.normal(0.0, 0.5, size=25)

    def two_pass(v):
        m = sum(v) / len(v)
        return m, sum((x - m) ** 2 for x in v) / len(v)

    ma, va = two_pass(a)
    mb, vb = two_pass(b)
    expect = abs(ma - mb) / np.sqrt(0.5 * (va + vb)) * 100.0
    got = standardized_difference(a, b)
    assert got == pytest.approx(expect, rel=1e-10)
