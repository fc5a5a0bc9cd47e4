"""End-to-end command-line runs: artifacts, determinism, config layering,
and error reporting with exit codes."""

import json

import numpy as np
import pytest

from hetfx.cli import main
from hetfx.data import PanelDataset, load_panel_csv, write_panel_csv
from hetfx.sim import DgpConfig, generate

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

# small everywhere: the point is plumbing, not statistics
FAST_NUIS = ["--nuisance-trees", "8", "--nuisance-min-leaf", "10"]
FAST_FOREST = ["--trees", "12", "--min-leaf", "15"]


@pytest.fixture(scope="module")
def dgp1_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "dgp1.csv"
    ds, _ = generate(DgpConfig(kind="dgp1", n=40, seed=1))
    write_panel_csv(ds, path)
    return str(path)


@pytest.fixture(scope="module")
def kink_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "kink.csv"
    ds, _ = generate(DgpConfig(kind="kink", n=80, seed=9))
    write_panel_csv(ds, path)
    return str(path)


def _run(args):
    return main([str(a) for a in args])


def _tree(outdir):
    return sorted(p.name for p in outdir.iterdir())


# ----------------------------------------------------------------------
# parser surface
# ----------------------------------------------------------------------


def test_no_command_prints_help(capsys):
    assert main([]) == 2
    assert "simulate" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "hetfx" in capsys.readouterr().out


def test_bad_flag_value(tmp_path, capsys):
    code = _run(["fit", "--data", "nowhere.csv", "--trees", "lots", "--out", tmp_path])
    assert code == 1
    assert "bad value for --trees" in capsys.readouterr().err


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------


def test_simulate_tables_manifest_and_determinism(tmp_path):
    base = ["simulate", "--dgp", "dgp1", "--n", "60", "--reps", "3", "--B", "19", "--seed", "3"]
    dirs = [tmp_path / name for name in ("a", "b", "c")]
    assert _run(base + ["--out", dirs[0]]) == 0
    assert _run(base + ["--out", dirs[1]]) == 0
    assert _run(base + ["--out", dirs[2], "--workers", "2"]) == 0

    assert _tree(dirs[0]) == ["manifest.json", "rejection-rates.csv", "rejection-rates.md"]
    table = (dirs[0] / "rejection-rates.csv").read_text()
    lines = table.strip().split("\n")
    # title, header, one row per hypothesis, footnote
    assert len(lines) == 5
    assert "N=60 re-centered" in lines[1]
    assert lines[2].startswith("dgp1: all effects >= 0")
    assert lines[3].startswith("dgp1: all effects <= 0")

    # reruns and extra workers must not move a byte
    for name in _tree(dirs[0]):
        blob = (dirs[0] / name).read_bytes()
        assert blob == (dirs[1] / name).read_bytes(), name
        assert blob == (dirs[2] / name).read_bytes(), name

    manifest = json.loads((dirs[0] / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["reps"] == 3
    assert "workers" not in manifest and "out" not in manifest


def test_simulate_emit_data_roundtrip(tmp_path):
    code = _run(
        ["simulate", "--dgp", "dgp2", "--n", "30", "--reps", "0",
         "--emit-data", "on", "--out", tmp_path]
    )
    assert code == 0
    ds = load_panel_csv(tmp_path / "data-dgp2-n30.csv")
    assert len(ds) == 30 and ds.covariate_names == ("x",)
    truth = (tmp_path / "truth-dgp2-n30.csv").read_text().strip().split("\n")
    assert truth[0] == "individual_id,period,true_cate"
    assert len(truth) == 31


def test_simulate_nothing_to_do(tmp_path, capsys):
    code = _run(["simulate", "--reps", "0", "--out", tmp_path])
    assert code == 1
    err = capsys.readouterr().err
    assert "ConfigError" in err and "options:" in err


def test_simulate_kink_rejection_rates_refused(tmp_path, capsys):
    code = _run(["simulate", "--dgp", "kink", "--reps", "2", "--out", tmp_path])
    assert code == 1
    assert "dgp1" in capsys.readouterr().err


# ----------------------------------------------------------------------
# score
# ----------------------------------------------------------------------


def test_score_artifacts_and_nuisance_reuse(tmp_path, dgp1_csv):
    first, second = tmp_path / "first", tmp_path / "second"
    base = ["score", "--data", dgp1_csv, "--B", "39", "--seed", "2"] + FAST_NUIS
    assert _run(base + ["--out", first]) == 0
    assert _tree(first) == ["ate.csv", "ate.md", "manifest.json", "nuisances.csv", "scores.csv"]
    assert len((first / "scores.csv").read_text().strip().split("\n")) == 41

    # reusing the written nuisance file must reproduce the scores exactly
    reuse = base + ["--out", second, "--nuisances", first / "nuisances.csv"]
    assert _run(reuse) == 0
    assert (second / "scores.csv").read_bytes() == (first / "scores.csv").read_bytes()
    assert not (second / "nuisances.csv").exists()


def test_score_unadjusted_skips_nuisances(tmp_path, dgp1_csv):
    out = tmp_path / "un"
    assert _run(["score", "--data", dgp1_csv, "--kind", "unadjusted",
                 "--B", "19", "--out", out]) == 0
    assert not (out / "nuisances.csv").exists()
    assert (out / "scores.csv").exists()


def test_score_rejects_misaligned_nuisance_file(tmp_path, dgp1_csv, capsys):
    good = tmp_path / "good"
    assert _run(["score", "--data", dgp1_csv, "--B", "19", "--out", good] + FAST_NUIS) == 0
    lines = (good / "nuisances.csv").read_text().strip().split("\n")
    clipped = tmp_path / "clipped.csv"
    clipped.write_text("\n".join(lines[:-1]) + "\n")
    code = _run(["score", "--data", dgp1_csv, "--nuisances", clipped,
                 "--B", "19", "--out", tmp_path / "bad"])
    assert code == 1
    assert "ValidationError" in capsys.readouterr().err


# ----------------------------------------------------------------------
# fit
# ----------------------------------------------------------------------


def test_fit_forest_artifacts(tmp_path, dgp1_csv):
    out = tmp_path / "forest"
    code = _run(["fit", "--data", dgp1_csv, "--estimator", "forest",
                 "--seed", "4", "--out", out] + FAST_NUIS + FAST_FOREST)
    assert code == 0
    cates = (out / "cates.csv").read_text().strip().split("\n")
    assert cates[0] == "individual_id,period,cate"
    assert len(cates) == 41
    for line in cates[1:]:
        float(line.split(",")[2])  # parseable effect value
    assert "honest forest" in (out / "model.txt").read_text()
    assert "% negative" in (out / "shares.csv").read_text()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["estimator"] == "forest" and manifest["trees"] == 12


def test_fit_ols_and_local_constant_summaries(tmp_path, dgp1_csv, kink_csv):
    ols_dir, lc_dir = tmp_path / "ols", tmp_path / "lc"
    assert _run(["fit", "--data", dgp1_csv, "--estimator", "ols", "--out", ols_dir]) == 0
    assert "interaction regression coefficients" in (ols_dir / "model.txt").read_text()

    assert _run(["fit", "--data", kink_csv, "--estimator", "local-constant",
                 "--out", lc_dir]) == 0
    text = (lc_dir / "model.txt").read_text()
    assert "stratified difference in means" in text and "x1" in text


def test_ols_covariate_selection_on_wide_data(tmp_path, capsys):
    # the interaction benchmark takes one covariate; --covariates picks it
    rng = np.random.default_rng(3)
    n = 60
    x = rng.normal(size=(n, 2))
    d = (np.arange(n) % 2).astype(np.int8)
    y = 1.0 + d * (0.5 + x[:, 1]) + rng.normal(size=n)
    ds = PanelDataset(np.arange(n), np.ones(n, dtype=np.int64), d, y, x, ("x1", "x2"))
    path = tmp_path / "wide.csv"
    write_panel_csv(ds, path)

    out = tmp_path / "out"
    code = _run(["fit", "--data", path, "--estimator", "ols",
                 "--covariates", "x2", "--out", out])
    assert code == 0
    model = (out / "model.txt").read_text()
    assert "x2" in model and "x1" not in model

    code = _run(["test", "--data", path, "--estimator", "ols", "--covariates", "x2",
                 "--refit", "on", "--B", "9", "--out", tmp_path / "refit"])
    assert code == 0

    code = _run(["fit", "--data", path, "--estimator", "ols", "--out", tmp_path / "no"])
    assert code == 1
    assert "exactly one covariate" in capsys.readouterr().err


def test_fit_explicit_covariate_list_and_unknown_name(tmp_path, kink_csv, capsys):
    ok = tmp_path / "ok"
    code = _run(["fit", "--data", kink_csv, "--estimator", "tree",
                 "--covariates", "x1,x3", "--min-leaf-grid", "40,80",
                 "--seed", "5", "--out", ok] + FAST_NUIS)
    assert code == 0
    model = (ok / "model.txt").read_text()
    assert "x2" not in model and "x4" not in model

    code = _run(["fit", "--data", kink_csv, "--covariates", "x9", "--out", tmp_path / "no"])
    assert code == 1
    assert "unknown covariate" in capsys.readouterr().err


# ----------------------------------------------------------------------
# test and qte-compare
# ----------------------------------------------------------------------


def test_test_subcommand_table(tmp_path, dgp1_csv):
    out = tmp_path / "tests"
    code = _run(["test", "--data", dgp1_csv, "--estimator", "ols", "--B", "29",
                 "--subgroup", "all:any", "--subgroup", "treated:any",
                 "--seed", "6", "--out", out])
    assert code == 0
    lines = (out / "tests.csv").read_text().strip().split("\n")
    assert len(lines) == 5  # title, header, two subgroups, footnote
    assert "p: all effects >= 0" in lines[1] and "p: all effects <= 0" in lines[1]
    assert lines[2].startswith("all:any") and lines[3].startswith("treated:any")


def test_test_single_hypothesis_column(tmp_path, dgp1_csv):
    out = tmp_path / "plus"
    code = _run(["test", "--data", dgp1_csv, "--estimator", "ols", "--B", "19",
                 "--hypothesis", "h-plus", "--out", out])
    assert code == 0
    header = (out / "tests.csv").read_text().split("\n")[1]
    assert "p: all effects >= 0" in header and "p: all effects <= 0" not in header


def test_test_bad_subgroup_specs(tmp_path, dgp1_csv, capsys):
    code = _run(["test", "--data", dgp1_csv, "--estimator", "ols",
                 "--subgroup", "all:any:1:x:extra", "--out", tmp_path / "a"])
    assert code == 1
    assert "too many fields" in capsys.readouterr().err

    code = _run(["test", "--data", dgp1_csv, "--estimator", "ols",
                 "--subgroup", "treated:at-or-above:high", "--out", tmp_path / "b"])
    assert code == 1
    assert "bad threshold" in capsys.readouterr().err


def test_qte_compare_artifacts(tmp_path, dgp1_csv):
    out = tmp_path / "qte"
    code = _run(["qte-compare", "--data", dgp1_csv, "--estimator", "ols",
                 "--B", "19", "--taus", "0.25,0.5,0.75", "--seed", "7", "--out", out])
    assert code == 0
    qlines = (out / "qte.csv").read_text().strip().split("\n")
    assert qlines[0] == "tau,q_treated,q_control,qte"
    assert len(qlines) == 4
    klines = (out / "ks.csv").read_text().strip().split("\n")
    assert [line.split(",")[0] for line in klines[2:5]] == ["treated", "control", "joint"]


def test_qte_compare_rejects_bad_taus(tmp_path, dgp1_csv, capsys):
    code = _run(["qte-compare", "--data", dgp1_csv, "--estimator", "ols",
                 "--taus", "0.5,1.0", "--out", tmp_path])
    assert code == 1
    assert "strictly between" in capsys.readouterr().err


# ----------------------------------------------------------------------
# report
# ----------------------------------------------------------------------


def test_report_artifacts_and_worker_invariance(tmp_path, kink_csv):
    base = [
        "report", "--data", kink_csv, "--estimator", "forest", "--with-period", "on",
        "--B", "19", "--seed", "8", "--running", "x1", "--threshold", "2000",
        "--subgroup", "all:any", "--subgroup", "control:zero",
        "--grid-size", "40",
    ] + FAST_NUIS + FAST_FOREST
    one, eight = tmp_path / "w1", tmp_path / "w2"
    assert _run(base + ["--out", one, "--workers", "1"]) == 0
    assert _run(base + ["--out", eight, "--workers", "2"]) == 0

    expected = [
        "ate.csv", "ate.md", "cates.csv", "curve.csv", "curve.png",
        "edf-control.png", "edf-treated.png", "ks.csv", "ks.md",
        "manifest.json", "model.txt", "qte.csv", "qte.png", "report.md",
        "shares.csv", "shares.md", "tests.csv", "tests.md",
    ]
    assert _tree(one) == expected
    for name in ("curve.png", "qte.png", "edf-treated.png", "edf-control.png"):
        assert (one / name).read_bytes()[:8] == PNG_MAGIC, name

    report = (one / "report.md").read_text()
    for name in ("curve.png", "qte.png", "edf-treated.png", "edf-control.png"):
        assert name in report
    assert "control:zero" in (one / "tests.csv").read_text()

    # the worker count must never change output bytes
    for name in expected:
        assert (one / name).read_bytes() == (eight / name).read_bytes(), name


# ----------------------------------------------------------------------
# config file and environment
# ----------------------------------------------------------------------


def test_config_ini_layering(tmp_path, dgp1_csv):
    ini = tmp_path / "hetfx.ini"
    ini.write_text(
        "[global]\nseed = 7\n\n[fit]\ntrees = 11\nestimator = forest\n"
        f"nuisance-trees = 8\nnuisance-min-leaf = 10\nmin-leaf = 15\n"
    )
    flag_dir, ini_dir = tmp_path / "flagged", tmp_path / "plain"
    assert _run(["fit", "--data", dgp1_csv, "--config", ini,
                 "--trees", "13", "--out", flag_dir]) == 0
    manifest = json.loads((flag_dir / "manifest.json").read_text())
    assert manifest["trees"] == 13  # flag beats config
    assert manifest["seed"] == 7  # [global] beats default

    assert _run(["fit", "--data", dgp1_csv, "--config", ini, "--out", ini_dir]) == 0
    manifest = json.loads((ini_dir / "manifest.json").read_text())
    assert manifest["trees"] == 11


def test_config_file_missing(tmp_path, dgp1_csv, capsys):
    code = _run(["fit", "--data", dgp1_csv, "--config", tmp_path / "none.ini",
                 "--out", tmp_path])
    assert code == 1
    assert "config file not found" in capsys.readouterr().err


def test_outdir_env_fallback(tmp_path, dgp1_csv, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv("HETFX_OUTDIR", str(target))
    assert _run(["fit", "--data", dgp1_csv, "--estimator", "ols"]) == 0
    assert (target / "cates.csv").exists()


# ----------------------------------------------------------------------
# failure reporting
# ----------------------------------------------------------------------


def test_errors_name_the_stage(tmp_path, capsys):
    code = _run(["score", "--data", tmp_path / "missing.csv", "--out", tmp_path])
    assert code == 1
    assert "[load-data]" in capsys.readouterr().err


def test_missing_data_flag(tmp_path, capsys):
    code = _run(["fit", "--out", tmp_path])
    assert code == 1
    assert "--data is required" in capsys.readouterr().err
