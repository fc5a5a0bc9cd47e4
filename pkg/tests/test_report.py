"""Table container, renderers, and cell formatters."""

import pytest

from hetfx.errors import ValidationError
from hetfx.report import (
    ReportTable,
    fmt_number,
    fmt_pvalue,
    fmt_share,
    fmt_stat,
    render_csv,
    render_markdown,
    render_report,
    table,
)


def _sample():
    return table(
        "Effects",
        ["n", "p"],
        [("all", [10, "0.01"]), ("treated", [4, "0.50"])],
        "a note",
    )


def test_table_normalizes_cells_to_strings():
    t = _sample()
    assert t.rows[0] == ("all", ("10", "0.01"))
    assert t.columns == ("n", "p")


def test_ragged_rows_rejected():
    with pytest.raises(ValidationError):
        ReportTable(title="T", columns=("a", "b"), rows=(("r", ("1",)),))


def test_render_csv_golden():
    expected = (
        "Effects,,\n"
        ",n,p\n"
        "all,10,0.01\n"
        "treated,4,0.50\n"
        "# a note,,\n"
    )
    assert render_csv(_sample()) == expected


def test_render_markdown_shape():
    text = render_markdown(_sample())
    lines = text.splitlines()
    assert lines[0] == "### Effects"
    assert lines[2].startswith("| ")
    # header, separator, two data rows
    assert sum(1 for ln in lines if ln.startswith("|")) == 4
    assert lines[-1] == "_a note_"
    # aligned: every pipe row has equal width
    widths = {len(ln) for ln in lines if ln.startswith("|")}
    assert len(widths) == 1


def test_render_report_dispatch():
    t = _sample()
    assert render_report(t, "csv") == render_csv(t)
    assert render_report(t, "markdown") == render_markdown(t)
    with pytest.raises(ValidationError):
        render_report(t, "pdf")


def test_formatters():
    assert fmt_share(49.3) == "49%"
    assert fmt_share(0.0) == "0%"
    assert fmt_share(100.0) == "100%"
    assert fmt_pvalue(0.004) == "0.00"
    assert fmt_pvalue(0.5) == "0.50"
    assert fmt_stat(0.12345) == "0.123"
    assert float(fmt_number(1 / 3)) == 1 / 3
