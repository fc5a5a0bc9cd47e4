"""Shared builders for synthetic panels used across the test modules."""

import numpy as np
import pytest

from hetfx.data import PanelDataset

# verdict lines recorded by the acceptance battery, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance verdicts")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def build_panel(
    n_individuals=20,
    n_periods=1,
    seed=0,
    p_treat=0.5,
    outcome=None,
    covariates=None,
    covariate_names=("x",),
    treatment=None,
):
    """Small deterministic panel; outcome defaults to standard normal draws."""
    rng = np.random.default_rng(seed)
    n = n_individuals * n_periods
    ids = np.repeat(np.arange(n_individuals), n_periods)
    period = np.tile(np.arange(1, n_periods + 1), n_individuals)
    if treatment is None:
        d_ind = (rng.random(n_individuals) < p_treat).astype(np.int8)
        # force both arms so tiny panels stay estimable
        d_ind[0], d_ind[1] = 1, 0
        treatment = d_ind[ids]
    else:
        treatment = np.asarray(treatment, dtype=np.int8)
    if covariates is None:
        k = len(covariate_names)
        covariates = rng.random((n, k))
    if outcome is None:
        outcome = rng.normal(size=n)
    return PanelDataset(
        ids, period, treatment, np.asarray(outcome, dtype=np.float64),
        np.asarray(covariates, dtype=np.float64), covariate_names,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
