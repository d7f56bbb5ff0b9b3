import io
import json
import os

import pandas as pd
import pytest

from cluster_data import METHODS
from main import ClusterRiskRatioApp, build_parser

from conftest import CONFIG_DIR, DATA_DIR

TABLE2 = os.path.join(DATA_DIR, "table2_study.csv")
SINGLE_CELL = os.path.join(CONFIG_DIR, "single_cell.yaml")


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("CLUSTER_RR_ALPHA", "CLUSTER_RR_WORKERS", "CLUSTER_RR_SEED",
                 "CLUSTER_RR_REPS", "CLUSTER_RR_STALL_RATIO"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setattr("main.load_dotenv", lambda: None)


def run(argv):
    return ClusterRiskRatioApp().run(argv)


def test_ci_csv_to_stdout(capsys):
    assert run(["ci", TABLE2, "--format", "csv"]) == 0
    out = capsys.readouterr().out
    frame = pd.read_csv(io.StringIO(out))
    assert list(frame["method"]) == list(METHODS)
    mr3 = frame[frame["method"] == "MR3"].iloc[0]
    assert not mr3["exists"]
    assert mr3["reason"] == "A_NONPOSITIVE"


def test_ci_table_and_out_file(tmp_path, capsys):
    out = tmp_path / "ci.json"
    assert run(["ci", TABLE2, "--format", "json", "--out", str(out)]) == 0
    records = json.loads(out.read_text())
    assert len(records) == 17
    assert "Wrote" in capsys.readouterr().out


def test_ci_empty_file_is_input_error(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run(["ci", str(empty)]) == 2
    assert "❌" in capsys.readouterr().err


def test_ci_alpha_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("CLUSTER_RR_ALPHA", "0.1")
    assert run(["ci", TABLE2, "--format", "csv"]) == 0
    narrow = pd.read_csv(io.StringIO(capsys.readouterr().out)).set_index("method")
    assert run(["ci", TABLE2, "--format", "csv", "--alpha", "0.05"]) == 0
    wide = pd.read_csv(io.StringIO(capsys.readouterr().out)).set_index("method")
    assert narrow.loc["DK2", "width"] < wide.loc["DK2", "width"]


def test_ci_all_success_arm_reports_nonexistent(tmp_path, capsys):
    study = tmp_path / "all_success.csv"
    study.write_text("group,cluster,size,successes\n"
                     "treatment,1,10,10\ntreatment,2,12,12\ntreatment,3,9,9\n"
                     "control,1,10,3\ncontrol,2,11,5\ncontrol,3,8,2\n")
    assert run(["ci", str(study), "--format", "csv"]) == 0
    frame = pd.read_csv(io.StringIO(capsys.readouterr().out)).set_index("method")
    assert len(frame) == 17
    for name in ("KA1", "KA2", "KA3"):
        assert not frame.loc[name, "exists"]
        assert frame.loc[name, "reason"] == "DEGENERATE_GROUP"


def test_ci_formula_switches(capsys):
    assert run(["ci", TABLE2, "--format", "csv"]) == 0
    printed = pd.read_csv(io.StringIO(capsys.readouterr().out)).set_index("method")
    assert run(["ci", TABLE2, "--format", "csv", "--katz-radicand", "standard", "--koopman-form", "standard"]) == 0
    standard = pd.read_csv(io.StringIO(capsys.readouterr().out)).set_index("method")
    assert standard.loc["MK3", "width"] < printed.loc["MK3", "width"]
    assert standard.loc["IH2", "width"] < printed.loc["IH2", "width"]
    assert standard.loc["DK2", "width"] == printed.loc["DK2", "width"]


def test_unwritable_output_is_input_error(tmp_path, capsys):
    out = tmp_path / "missing_dir" / "ci.csv"
    assert run(["ci", TABLE2, "--format", "csv", "--out", str(out)]) == 2
    assert "❌" in capsys.readouterr().err


def test_unwritable_summary_is_input_error(tmp_path, capsys):
    summary = tmp_path / "missing_dir" / "summary.csv"
    assert run(["simulate", SINGLE_CELL, "--reps", "3", "--out", str(tmp_path / "cells.csv"),
                "--summary-out", str(summary)]) == 2
    assert "❌" in capsys.readouterr().err


def test_malformed_environment(monkeypatch):
    monkeypatch.setenv("CLUSTER_RR_WORKERS", "many")
    assert run(["ci", TABLE2]) == 2


def test_simulate_single_cell(tmp_path):
    out = tmp_path / "cells.csv"
    summary = tmp_path / "summary.csv"
    assert run(["simulate", SINGLE_CELL, "--reps", "5", "--out", str(out),
                "--summary-out", str(summary)]) == 0
    cells = pd.read_csv(out)
    assert len(cells) == 17
    assert set(cells["good"]) == {5}
    medians = pd.read_csv(summary)
    assert list(medians.columns) == ["method", "median_cp", "median_ew", "median_dnptnp"]
    assert (tmp_path / "summary_means.csv").exists()

    again = tmp_path / "again.csv"
    assert run(["simulate", SINGLE_CELL, "--reps", "5", "--out", str(again)]) == 0
    assert out.read_bytes() == again.read_bytes()


def test_simulate_unknown_config_key(tmp_path):
    config = tmp_path / "grid.yaml"
    config.write_text(open(SINGLE_CELL).read() + "bogus: 1\n")
    assert run(["simulate", str(config)]) == 2


@pytest.mark.slow
def test_simulate_workers_byte_identical(tmp_path):
    config = tmp_path / "grid.yaml"
    config.write_text(open(SINGLE_CELL).read().replace("eta: [1.5]", "eta: [1.0, 1.5, 2.0]"))
    serial, parallel = tmp_path / "w1.csv", tmp_path / "w4.csv"
    assert run(["simulate", str(config), "--reps", "8", "--workers", "1", "--out", str(serial)]) == 0
    assert run(["simulate", str(config), "--reps", "8", "--workers", "4", "--out", str(parallel)]) == 0
    assert serial.read_bytes() == parallel.read_bytes()


@pytest.mark.slow
def test_appropriateness_json(capsys):
    params = os.path.join(CONFIG_DIR, "example_infection.yaml")
    assert run(["appropriateness", params, "--reps", "30", "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["method"] for r in rows] == ["HB1", "MK3", "IH2", "KA2", "DK2", "DK3", "FB2", "MR3"]
    assert all(r["verdict"] in ("PASS", "FLAG") for r in rows)


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_appropriateness_has_no_workers_flag():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["appropriateness", "params.yaml", "--workers", "2"])
