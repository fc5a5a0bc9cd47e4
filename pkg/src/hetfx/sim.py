"""Synthetic experiments with known effect heterogeneity.

Three generating processes:

* ``dgp1`` / ``dgp2``: one-period randomized experiments, outcome
  Y = D*X*beta + X*gamma + U (dgp2 negates the interaction), X ~ U(0,1),
  U ~ N(0, noise_sd^2). True conditional effect is +/- beta*X.
* ``kink``: a multi-period panel of censored earnings with a piecewise
  linear benefit schedule around a full-time earnings threshold. Effects are
  strictly positive for individuals far below the threshold, sign-mixed in
  between and non-positive above it, which gives known-sign subgroups for
  testing the dominance machinery end to end.

Also the OLS interaction benchmark estimator and a Monte Carlo harness that
turns dominance-test p-values into rejection rates.
"""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass

from .cate import CateEstimates
from .data import PanelDataset
from .errors import ConfigError, SingularDesignError, ValidationError
from .inference import BootstrapPlan, dominance_test_both
from .util import parallel_map, seed_sequence, stream_rng

DGP_KINDS = ("dgp1", "dgp2", "kink")

# kink panel shape and latent-index coefficients (fractions of the threshold);
# frozen after a brute-force audit of the implied sign regions
KINK_PERIODS = 7
KINK_NOISE_FRAC = 0.1
KINK_BASE = -0.75
KINK_SLOPES = (0.30, 0.20, 0.08, 0.04)
KINK_TREND = 0.10
KINK_X1_LOAD = 1.6
KINK_KNOTS = (800.0, -0.45, -600.0)


@dataclass(frozen=True)
class DgpConfig:
    """Generating-process choice and its parameters.

    ``beta``/``gamma``/``noise_sd`` apply to dgp1/dgp2 only; ``threshold``
    and ``kink_knots`` (benefit at the far-below limit, zero crossing as a
    negative fraction of the threshold, effect at the threshold) to kink.
    """

    kind: str
    n: int
    beta: float = 1.0
    gamma: float = 1.0
    noise_sd: float = 4.0
    p_treat: float = 0.5
    threshold: float = 2000.0
    kink_knots: tuple = KINK_KNOTS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in DGP_KINDS:
            raise ConfigError(f"unknown generating process {self.kind!r}")
        if self.n < 2:
            raise ConfigError("need at least 2 individuals")
        if not 0.0 < self.p_treat < 1.0:
            raise ConfigError("p_treat must lie strictly inside (0, 1)")
        if self.noise_sd <= 0.0:
            raise ConfigError("noise_sd must be positive")
        if self.kind == "kink":
            if self.threshold <= 0.0:
                raise ConfigError("threshold must be positive")
            benefit, zc, at_thr = self.kink_knots
            # the noise band is +/- KINK_NOISE_FRAC * threshold, so these
            # bounds are what make the three sign regions hold with certainty:
            # zero-earnings rows stay left of the zero crossing, above-
            # threshold rows stay right of it
            if not benefit > 0.0:
                raise ConfigError("far-below benefit knot must be positive")
            if not -(1.0 - KINK_NOISE_FRAC) < zc < -KINK_NOISE_FRAC:
                raise ConfigError(
                    "zero-crossing knot must lie in "
                    f"({-(1.0 - KINK_NOISE_FRAC)}, {-KINK_NOISE_FRAC})"
                )
            if not at_thr < 0.0:
                raise ConfigError("effect at the threshold must be negative")


@dataclass(frozen=True)
class GroundTruth:
    """Per-observation realized effects Y(1) - Y(0)."""

    true_cate: np.ndarray

    @property
    def true_ate(self) -> float:
        return float(self.true_cate.mean())


def kink_effect(r: np.ndarray, threshold: float, knots: tuple = KINK_KNOTS) -> np.ndarray:
    """Piecewise-linear benefit schedule g(r), r = latent earnings - threshold.

    Constant at the benefit level for r <= -threshold, linear to zero at the
    crossing knot, down to the (negative) threshold knot at r = 0, then back
    up to zero at r = threshold and zero beyond.
    """
    benefit, zc, at_thr = knots
    xp = np.array([-threshold, zc * threshold, 0.0, threshold])
    fp = np.array([benefit, 0.0, at_thr, 0.0])
    return np.interp(np.asarray(r, dtype=np.float64), xp, fp, left=benefit, right=0.0)


def _rng_of(cfg: DgpConfig, rng) -> np.random.Generator:
    if rng is None:
        return stream_rng(cfg.seed, "generate")
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def generate(cfg: DgpConfig, rng=None) -> tuple[PanelDataset, GroundTruth]:
    """Draw one dataset and its ground truth.

    Args:
        cfg: generating-process configuration.
        rng: generator, integer seed, or None to use ``cfg.seed`` through the
            named-stream derivation.
    """
    rng = _rng_of(cfg, rng)
    n = cfg.n
    if cfg.kind in ("dgp1", "dgp2"):
        x = rng.random(n)
        d = (rng.random(n) < cfg.p_treat).astype(np.int8)
        u = rng.normal(0.0, cfg.noise_sd, n)
        sign = 1.0 if cfg.kind == "dgp1" else -1.0
        cate = sign * cfg.beta * x
        y = d * cate + cfg.gamma * x + u
        ds = PanelDataset(
            np.arange(n), np.ones(n, dtype=np.int64), d, y, x[:, None], ("x",)
        )
        return ds, GroundTruth(true_cate=cate)

    F = cfg.threshold
    T = KINK_PERIODS
    # individual-level draws: x1 has a mass point at zero (one third of
    # individuals), the rest spread over (0, F]; x3 is binary
    x1 = F * np.maximum(0.0, 1.5 * rng.random(n) - 0.5)
    x2 = rng.random(n)
    x3 = (rng.random(n) < 0.5).astype(np.float64)
    x4 = rng.random(n)
    x5 = rng.random(n)
    d = (rng.random(n) < cfg.p_treat).astype(np.int8)
    eps = rng.uniform(-KINK_NOISE_FRAC * F, KINK_NOISE_FRAC * F, n * T)

    ids = np.repeat(np.arange(n), T)
    period = np.tile(np.arange(1, T + 1), n)
    tt = (period - 1) / (T - 1)
    c2, c3, c4, c5 = KINK_SLOPES
    base = KINK_BASE + c2 * x2 + c3 * x3 + c4 * x4 + c5 * x5
    m = F * (base[ids] + KINK_TREND * tt) + KINK_X1_LOAD * x1[ids]
    y0 = np.maximum(0.0, m + eps)
    delta = kink_effect(m - F, F, cfg.kink_knots)
    y1 = np.maximum(0.0, y0 + delta)
    y = np.where(d[ids] == 1, y1, y0)
    cov = np.column_stack([x1, x2, x3, x4, x5])[ids]
    ds = PanelDataset(
        ids, period, d[ids], y, cov, ("x1", "x2", "x3", "x4", "x5")
    )
    return ds, GroundTruth(true_cate=y1 - y0)


# ----------------------------------------------------------------------
# OLS interaction benchmark
# ----------------------------------------------------------------------


def ols_interaction_coefficients(ds: PanelDataset) -> np.ndarray:
    """Normal-equation OLS of Y on [1, D, X, D*X] for one-covariate data.

    Returns the coefficient vector in that column order.
    """
    if ds.covariates.shape[1] != 1:
        raise ValidationError("interaction benchmark needs exactly one covariate")
    if ds.n_periods != 1:
        raise ValidationError("interaction benchmark expects single-period data")
    x = ds.covariates[:, 0]
    d = ds.treatment.astype(np.float64)
    if np.ptp(x) == 0.0:
        raise SingularDesignError("constant covariate; interaction design is singular")
    if d.min() == d.max():
        raise SingularDesignError("single-armed sample; interaction design is singular")
    z = np.column_stack([np.ones(len(ds)), d, x, d * x])
    a = z.T @ z
    b = z.T @ ds.outcome
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("interaction design is singular") from exc


def ols_interaction_cate(ds: PanelDataset) -> CateEstimates:
    """Per-row effects beta_D + X * beta_DX from the interaction regression."""
    coef = ols_interaction_coefficients(ds)
    values = coef[1] + ds.covariates[:, 0] * coef[3]
    return CateEstimates(values=values, estimator="ols-interaction")


# ----------------------------------------------------------------------
# Monte Carlo harness
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class McCell:
    """Rejection rates for one (generating process, sample size) cell."""

    dgp: str
    n: int
    reps: int
    n_boot: int
    rate_plus_recentered: float
    rate_minus_recentered: float
    rate_plus_uncentered: float
    rate_minus_uncentered: float


def _ols_refit_pipeline(ds: PanelDataset, rng) -> np.ndarray:
    # deterministic estimator; rng is part of the pipeline contract only
    return ols_interaction_cate(ds).values


def _mc_one(args) -> tuple:
    cfg, rep, n_boot, seed, alpha = args
    label = f"mc-{cfg.kind}-{cfg.n}"
    ds, _ = generate(cfg, stream_rng(seed, label, rep))
    boot_seed = int(seed_sequence(seed, label + "-boot", rep).generate_state(1, np.uint64)[0])
    plan = BootstrapPlan(n_replicates=n_boot, seed=boot_seed, workers=1)
    rec, unc = dominance_test_both(_ols_refit_pipeline, ds, None, plan)
    return (
        rec.p_plus < alpha,
        rec.p_minus < alpha,
        unc.p_plus < alpha,
        unc.p_minus < alpha,
    )


def run_monte_carlo(
    cfg: DgpConfig,
    reps: int,
    n_boot: int = 499,
    seed: int = 0,
    workers: int = 1,
    alpha: float = 0.05,
) -> McCell:
    """Rejection rates of both dominance hypotheses over repeated draws.

    Every repetition draws a fresh dataset, estimates effects with the OLS
    interaction benchmark, and runs the dominance test with full re-estimation
    inside each bootstrap replicate; re-centered and uncentered p-values share
    the same replicates. Repetitions have independent named seed streams, so
    the rates do not depend on ``workers``.
    """
    if reps < 1:
        raise ConfigError("need at least 1 repetition")
    jobs = [(cfg, rep, n_boot, seed, alpha) for rep in range(reps)]
    flags = np.asarray(parallel_map(_mc_one, jobs, workers=workers), dtype=np.float64)
    rates = flags.mean(axis=0)
    return McCell(
        dgp=cfg.kind,
        n=cfg.n,
        reps=reps,
        n_boot=n_boot,
        rate_plus_recentered=float(rates[0]),
        rate_minus_recentered=float(rates[1]),
        rate_plus_uncentered=float(rates[2]),
        rate_minus_uncentered=float(rates[3]),
    )
