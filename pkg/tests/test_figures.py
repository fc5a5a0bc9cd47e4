"""Figure rendering: valid PNG files whose bytes are stable across reruns."""

import numpy as np

from conftest import build_panel
from hetfx.cate import smooth_cates
from hetfx.figures import curve_figure, edf_figure, qte_figure
from hetfx.inference import BootstrapPlan
from hetfx.qte import EDF, qte

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _curve(with_band=True):
    rng = np.random.default_rng(0)
    running = np.linspace(-2.0, 2.0, 120)
    cates = 0.5 * running + rng.normal(scale=0.2, size=120)
    ids = np.arange(120)
    plan = BootstrapPlan(n_replicates=19, seed=5) if with_band else None
    return smooth_cates(cates, running, ids, plan=plan, grid_size=60)


def _qte_curve():
    y = np.concatenate([np.linspace(0, 1, 30) + 0.3, np.linspace(0, 1, 30)])
    d = np.concatenate([np.ones(30, dtype=np.int8), np.zeros(30, dtype=np.int8)])
    ds = build_panel(n_individuals=60, treatment=d, outcome=y)
    return qte(ds, np.array([0.1, 0.25, 0.5, 0.75, 0.9]))


def test_curve_figure_writes_png(tmp_path):
    path = str(tmp_path / "curve.png")
    out = curve_figure(_curve(), path, threshold=0.5)
    assert out == path
    blob = (tmp_path / "curve.png").read_bytes()
    assert blob[:8] == PNG_MAGIC
    assert len(blob) > 1000


def test_curve_figure_without_band(tmp_path):
    curve = _curve(with_band=False)
    assert curve.ci_low is None
    out = curve_figure(curve, str(tmp_path / "bare.png"))
    assert (tmp_path / "bare.png").read_bytes()[:8] == PNG_MAGIC


def test_qte_figure_writes_png(tmp_path):
    qte_figure(_qte_curve(), str(tmp_path / "qte.png"))
    assert (tmp_path / "qte.png").read_bytes()[:8] == PNG_MAGIC


def test_edf_figure_writes_png(tmp_path):
    rng = np.random.default_rng(3)
    actual = EDF.from_values(rng.normal(size=200))
    simulated = EDF.from_values(rng.normal(size=200) + 0.1)
    edf_figure(actual, simulated, str(tmp_path / "edf.png"))
    assert (tmp_path / "edf.png").read_bytes()[:8] == PNG_MAGIC


def test_figures_rerun_byte_identical(tmp_path):
    # pinned dpi and metadata: the same inputs must yield the same file bytes
    curve = _curve()
    q = _qte_curve()
    rng = np.random.default_rng(3)
    a = EDF.from_values(rng.normal(size=100))
    b = EDF.from_values(rng.normal(size=100))
    for rerun in ("one", "two"):
        sub = tmp_path / rerun
        sub.mkdir()
        curve_figure(curve, str(sub / "curve.png"), threshold=0.0)
        qte_figure(q, str(sub / "qte.png"))
        edf_figure(a, b, str(sub / "edf.png"))
    for name in ("curve.png", "qte.png", "edf.png"):
        first = (tmp_path / "one" / name).read_bytes()
        second = (tmp_path / "two" / name).read_bytes()
        assert first == second, name
