import csv
import subprocess
import sys

import pytest

from abreu.cli import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, main
from abreu.config import SCHEMA, ConfigError, RunConfig, bundled_config

BUNDLED = ["fixed_delta", "rochet_chone_rho1", "uniqueness_bump", "allen_cahn", "oracle_saddle", "superellipse_disk"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_defaults_cover_schema():
    cfg = RunConfig.parse("")
    assert set(cfg.values) == set(SCHEMA)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_configs_build(name):
    cfg = RunConfig.load(bundled_config(name)).override(**{"grid.n": 33})
    d = cfg.domain()
    cfg.problem(d)
    cfg.homotopy()
    cfg.oracle()


@pytest.mark.parametrize(
    "text",
    [
        "grid.n = 65\nbogus.key = 1",
        "problem.theta = 0.5",
        "problem.eps_list = 0.1, 0.2",
        "homotopy.t_schedule = 0.5, 1.0",
        "model.gamma = wiggly",
        "domain.omega0 = disk\ndomain.omega0_params = 0, 0",
        "homotopy.cold_start = yes",
        "no equals sign",
    ],
)
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        RunConfig.parse(text)


def test_comments_and_override():
    cfg = RunConfig.parse("# header\ngrid.n = 33  # coarse\nrun.seed = 4")
    assert cfg["grid.n"] == 33 and cfg["run.seed"] == 4
    assert cfg.override(**{"grid.n": 17, "run.seed": None})["grid.n"] == 17
    with pytest.raises(ConfigError):
        cfg.override(**{"grid.n": 3})


def test_unknown_bundled_name():
    with pytest.raises(ConfigError):
        bundled_config("nope")


def test_missing_config_exit_code(tmp_path):
    assert main(["solve", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_continue_requires_continuation_mode(tmp_path):
    assert main(["continue", "--config", "fixed_delta", "--grid", "17", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_solve_writes_report_and_fields(tmp_path):
    assert main(["solve", "--config", "fixed_delta", "--grid", "17", "--out", str(tmp_path)]) == EXIT_OK
    rep = rows(tmp_path / "report.csv")
    assert list(rep[0]) == ["t", "k", "defect", "ma_residual", "lma_residual", "min_w", "max_w", "min_det", "max_det"]
    summary = {r["key"]: r["value"] for r in rows(tmp_path / "summary.csv")}
    assert summary["status"] == "CONVERGED"
    assert list(rows(tmp_path / "u.csv")[0]) == ["x", "y", "value", "node_class"]


def test_unconverged_solve_exit_code(tmp_path):
    cfg = tmp_path / "tight.cfg"
    cfg.write_text("grid.n = 17\nhomotopy.max_outer = 1\nhomotopy.t_schedule = 0, 1\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_NOT_CONVERGED


def test_diagnose_uses_field_dump(tmp_path):
    assert main(["solve", "--config", "fixed_delta", "--grid", "17", "--out", str(tmp_path)]) == EXIT_OK
    out = tmp_path / "diag"
    code = main(["diagnose", "--config", "fixed_delta", "--grid", "17", "--field", str(tmp_path / "u.csv"), "--out", str(out)])
    assert code == EXIT_OK
    keys = {r["key"] for r in rows(out / "diagnose.csv")}
    assert {"int_unu2", "int_K_psi_unu2", "curvature_flag", "AsH_passed"} <= keys


def test_diagnose_rejects_mismatched_field(tmp_path):
    assert main(["solve", "--config", "fixed_delta", "--grid", "17", "--out", str(tmp_path)]) == EXIT_OK
    code = main(["diagnose", "--config", "fixed_delta", "--grid", "21", "--field", str(tmp_path / "u.csv"), "--out", str(tmp_path)])
    assert code == EXIT_CONFIG


def test_oracle_command(tmp_path):
    assert main(["oracle", "--config", "oracle_saddle", "--grid", "13", "--out", str(tmp_path)]) == EXIT_OK
    hist = rows(tmp_path / "oracle.csv")
    assert list(hist[0]) == ["iterate", "objective", "pg_norm", "max_violation"]


def test_console_entry_point_runs_selftest(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "abreu.cli", "selftest", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout
    assert rows(tmp_path / "selftest.csv")[0].keys() == {"check", "passed", "detail"}
