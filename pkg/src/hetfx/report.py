"""Tabular output: one table model, CSV and markdown backends.

Cells are pre-formatted strings so both backends render the same content;
the formatting helpers pin the conventions used everywhere (shares as whole
percent, p-values with two decimals).
"""

from __future__ import annotations

import io
import csv

from dataclasses import dataclass, field

from .errors import ValidationError
from .util import format_float


@dataclass(frozen=True)
class ReportTable:
    """Rectangular labeled table with an optional footnote."""

    title: str
    columns: tuple
    rows: tuple = ()
    footnote: str = ""

    def __post_init__(self) -> None:
        for label, values in self.rows:
            if len(values) != len(self.columns):
                raise ValidationError(
                    f"row {label!r} has {len(values)} cells for "
                    f"{len(self.columns)} columns"
                )


def table(title: str, columns, rows, footnote: str = "") -> ReportTable:
    """Build a ReportTable, normalizing cells to strings."""
    norm = tuple(
        (str(label), tuple(str(v) for v in values)) for label, values in rows
    )
    return ReportTable(
        title=title, columns=tuple(str(c) for c in columns), rows=norm,
        footnote=footnote,
    )


def fmt_share(x: float) -> str:
    """Whole-percent share, e.g. 0.493 of the sample -> '49%'."""
    return f"{round(float(x)):.0f}%"


def fmt_pvalue(x: float) -> str:
    return f"{float(x):.2f}"


def fmt_stat(x: float) -> str:
    """Statistic cells: 3 decimals, enough for test statistics in [0, 1]."""
    return f"{float(x):.3f}"


def fmt_number(x: float) -> str:
    """Full-precision float for machine-readable CSV cells."""
    return format_float(float(x))


def render_csv(t: ReportTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([t.title] + [""] * len(t.columns))
    w.writerow([""] + list(t.columns))
    for label, values in t.rows:
        w.writerow([label] + list(values))
    if t.footnote:
        w.writerow(["# " + t.footnote] + [""] * len(t.columns))
    return buf.getvalue()


def render_markdown(t: ReportTable) -> str:
    header = ["", *t.columns]
    body = [[label, *values] for label, values in t.rows]
    widths = [
        max(len(str(r[j])) for r in [header, *body]) for j in range(len(header))
    ]

    def line(cells) -> str:
        return "| " + " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)) + " |"

    out = [f"### {t.title}", ""]
    out.append(line(header))
    out.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    out.extend(line(r) for r in body)
    if t.footnote:
        out.extend(["", f"_{t.footnote}_"])
    return "\n".join(out) + "\n"


def render_report(t: ReportTable, format: str = "csv") -> str:
    """Render one table; ``format`` is 'csv' or 'markdown'."""
    if format == "csv":
        return render_csv(t)
    if format == "markdown":
        return render_markdown(t)
    raise ValidationError(f"unknown table format {format!r}")
