"""Exception types raised across the package.

Everything derives from :class:`HetfxError` so callers can catch one base
class at pipeline boundaries. Plain ``ValueError``/``IndexError`` are still
used for garden-variety argument mistakes (bad shapes, out-of-range indices).
"""

from __future__ import annotations


class HetfxError(Exception):
    """Base class for package-specific errors."""


class SchemaError(HetfxError):
    """A required column is missing or a column mapping is invalid."""


class ValidationError(HetfxError):
    """Input data violates a dataset invariant (names the offending row/unit)."""


class EmptyDatasetError(HetfxError):
    """A dataset with zero observations where at least one is required."""


class UndefinedStatisticError(HetfxError):
    """A statistic whose defining denominator is degenerate (for example a
    standardized difference with zero pooled variance and unequal means)."""


class InsufficientDataError(HetfxError):
    """Too few rows, clusters, or arms for the requested fit."""


class DegenerateGroupError(HetfxError):
    """A partition cell lacks treated or control observations; names the cell."""


class SingularDesignError(HetfxError):
    """A regression design matrix is rank deficient."""


class DegenerateDistributionError(HetfxError):
    """A distribution required to have support mass is empty (for example a
    positive-part distribution in an arm with no positive outcomes)."""


class ConfigError(HetfxError):
    """Invalid or contradictory configuration values."""
