import hashlib
import io
import json
import os
from dataclasses import replace

import pandas as pd
import pytest

from cluster_data import METHODS
from errors import ConfigError, ParseError, ValidationError
from interval_methods import compute_all
from study_io import (
    GridConfig,
    load_grid_config,
    load_params_config,
    parse_study,
    read_study,
    render_csv,
    render_json,
    render_table,
    results_frame,
    write_study,
)

from conftest import CONFIG_DIR, DATA_DIR

CHECKSUMS = {
    "table1_study.csv": "88e5ff985b0706a52ec5d6abd59ba92daddeaa2b6f7215ccc5c9007294440fe8",
    "table2_study.csv": "7c4c50c30ea88f815c2f4822c8e42ac621c5ee1fc3e8e60043784066ee714d34",
}


@pytest.mark.parametrize("name", sorted(CHECKSUMS))
def test_fixture_checksums(name):
    with open(os.path.join(DATA_DIR, name), "rb") as handle:
        assert hashlib.sha256(handle.read()).hexdigest() == CHECKSUMS[name]


def test_table1_layout(table1_study):
    assert len(table1_study.treatment) == len(table1_study.control) == 20
    assert set(table1_study.treatment.sizes) == {100.0}
    assert table1_study.treatment.total_successes == 421
    assert table1_study.control.total_successes == 52


def test_table2_layout(table2_study):
    assert table2_study.treatment.total_size == 145
    assert table2_study.treatment.total_successes == 13
    assert table2_study.control.total_size == 158
    assert table2_study.control.total_successes == 2


def test_round_trip(table2_study):
    assert parse_study(write_study(table2_study)) == table2_study


def test_empty_file():
    with pytest.raises(ParseError):
        parse_study("")


def test_bad_header():
    with pytest.raises(ParseError) as info:
        parse_study("arm,cluster,size,successes\ntreatment,1,5,2\n")
    assert info.value.line == 1


def test_bad_integer_reports_line():
    text = "group,cluster,size,successes\ntreatment,1,5,2\ntreatment,2,five,2\n"
    with pytest.raises(ParseError) as info:
        parse_study(text)
    assert info.value.line == 3
    assert "line 3" in str(info.value)


def test_unknown_group():
    with pytest.raises(ParseError):
        parse_study("group,cluster,size,successes\nplacebo,1,5,2\n")


def test_duplicate_cluster():
    text = ("group,cluster,size,successes\n"
            "treatment,a,5,2\ntreatment,a,6,1\ncontrol,a,5,1\ncontrol,b,5,0\n")
    with pytest.raises(ValidationError):
        parse_study(text)


def test_successes_above_size():
    text = ("group,cluster,size,successes\n"
            "treatment,1,5,6\ntreatment,2,6,1\ncontrol,1,5,1\ncontrol,2,5,0\n")
    with pytest.raises(ValidationError):
        parse_study(text)


def test_missing_file():
    with pytest.raises(ParseError):
        read_study(os.path.join(DATA_DIR, "no_such_file.csv"))


# --- configs -------------------------------------------------------------------

def test_full_grid():
    config = load_grid_config(os.path.join(CONFIG_DIR, "full_grid.yaml"))
    assert config.cell_count == 144
    specs = config.scenarios()
    assert len(specs) == 144
    assert len({s.seed for s in specs}) == 144
    assert [s.cell for s in specs] == list(range(144))
    assert specs[0].replications == 10000


def test_adding_axis_value_keeps_existing_cell_seeds():
    base = GridConfig(clusters=(20,), cluster_sizes=(50,), gamma1=0.2, eta=(1.5,),
                      theta_pairs=((0.1, 0.1),), seed=7)
    wider = replace(base, eta=(1.0, 1.5), clusters=(10, 20))
    seeds = {s.coordinates: s.seed for s in wider.scenarios()}
    original = base.scenarios()[0]
    assert seeds[original.coordinates] == original.seed
    assert len(set(seeds.values())) == 4


def test_reproduction_configs_use_standard_forms():
    for name in ("full_grid.yaml", "desk_grid.yaml"):
        params = load_grid_config(os.path.join(CONFIG_DIR, name)).method_params()
        assert params.koopman_form == "standard"
        assert params.katz_radicand == "standard"
        assert not params.fieller_pooled_gamma
    for name in ("example_antidepressants.yaml", "example_teratology.yaml", "example_infection.yaml"):
        params = load_params_config(os.path.join(CONFIG_DIR, name)).method_params()
        assert params.koopman_form == "standard"
        assert params.katz_radicand == "standard"


def test_method_options_default_and_override(tmp_path):
    defaults = load_grid_config(os.path.join(CONFIG_DIR, "single_cell.yaml")).method_params()
    assert defaults.koopman_form == "printed" and defaults.katz_radicand == "printed"

    path = tmp_path / "params.yaml"
    path.write_text("eta: 1.2\ntreatment: {gamma: 0.3, icc: 0.1, clusters: 8, mean_size: 10}\n"
                    "control: {icc: 0.1, clusters: 8, mean_size: 10}\nalpha: 0.1\n"
                    "fieller_pooled_gamma: true\nkatz_radicand: standard\n")
    params = load_params_config(path).method_params()
    assert params.fieller_pooled_gamma
    assert params.katz_radicand == "standard"
    assert params.koopman_form == "printed"
    assert params.alpha == pytest.approx(0.1)


def test_bad_method_option(tmp_path):
    path = tmp_path / "grid.yaml"
    path.write_text("clusters: [20]\ncluster_sizes: [5]\ngamma1: 0.2\neta: [1]\n"
                    "theta_pairs: [[0.1, 0.1]]\nseed: 1\nkoopman_form: exact\n")
    with pytest.raises(ConfigError):
        load_grid_config(path)


def test_grid_overrides():
    config = load_grid_config(os.path.join(CONFIG_DIR, "single_cell.yaml"))
    specs = config.scenarios(replications=3, seed=11)
    assert specs[0].replications == 3
    assert specs[0].seed != config.scenarios()[0].seed


def test_unknown_grid_key(tmp_path):
    path = tmp_path / "grid.yaml"
    path.write_text("clusters: [20]\ncluster_sizes: [5]\ngamma1: 0.2\neta: [1]\n"
                    "theta_pairs: [[0.1, 0.1]]\nseed: 1\nreplicates: 5\n")
    with pytest.raises(ConfigError):
        load_grid_config(path)


def test_missing_grid_key(tmp_path):
    path = tmp_path / "grid.yaml"
    path.write_text("clusters: [20]\ngamma1: 0.2\neta: [1]\ntheta_pairs: [[0.1, 0.1]]\n")
    with pytest.raises(ConfigError):
        load_grid_config(path)


def test_grid_without_seed(tmp_path):
    path = tmp_path / "grid.yaml"
    path.write_text("clusters: [20]\ncluster_sizes: [5]\ngamma1: 0.2\neta: [1]\ntheta_pairs: [[0.1, 0.1]]\n")
    with pytest.raises(ConfigError):
        load_grid_config(path).scenarios()


def test_params_config():
    params = load_params_config(os.path.join(CONFIG_DIR, "example_antidepressants.yaml"))
    assert params.eta == pytest.approx(1.545)
    assert params.treatment.gamma == pytest.approx(0.604)
    assert params.control.gamma is None
    assert params.control.mean_size == pytest.approx(36.93)
    assert params.methods == ("HB1", "MK3", "IH2", "KA2", "DK2", "DK3", "FB2", "MR3")


def test_params_reject_control_gamma(tmp_path):
    path = tmp_path / "params.yaml"
    path.write_text("eta: 1.2\ntreatment: {gamma: 0.3, icc: 0.1, clusters: 8, mean_size: 10}\n"
                    "control: {gamma: 0.25, icc: 0.1, clusters: 8, mean_size: 10}\n")
    with pytest.raises(ConfigError):
        load_params_config(path)


# --- rendering -----------------------------------------------------------------

def test_csv_output_round_trips_limits(table1_study):
    results = compute_all(table1_study)
    parsed = pd.read_csv(io.StringIO(render_csv(results_frame(results))))
    assert list(parsed["method"]) == list(METHODS)
    for r, (_, row) in zip(results, parsed.iterrows()):
        if r.exists:
            assert row["lower"] == pytest.approx(r.lower, rel=1e-12)
            assert row["upper"] == pytest.approx(r.upper, rel=1e-12)
        else:
            assert pd.isna(row["lower"])


def test_json_mirrors_csv(table2_study):
    frame = results_frame(compute_all(table2_study))
    records = json.loads(render_json(frame))
    assert [r["method"] for r in records] == list(METHODS)
    mr3 = records[-1]
    assert mr3["exists"] is False
    assert mr3["lower"] is None
    assert mr3["reason"] == "A_NONPOSITIVE"


def test_table_spells_out_nonexistent(table2_study):
    text = render_table(results_frame(compute_all(table2_study)))
    assert "Nonexistent" in text
    assert "A_NONPOSITIVE" in text
