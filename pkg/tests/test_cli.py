import csv
import json

import pytest

from permvi.cli import main
from permvi.config import ExperimentConfig, parse_config, parse_override
from permvi.errors import ParseError, ValidationError

CHEAP = ["--steps", "2", "--eval-samples", "20", "--mallows-steps", "60", "--samples", "2"]


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_empty_config_gives_defaults(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text("")
    assert parse_config(p) == ExperimentConfig()
    p.write_text("{}")
    assert parse_config(p) == ExperimentConfig()
    assert parse_config() == ExperimentConfig()


def test_defaults_carry_the_usual_clamps():
    cfg = ExperimentConfig()
    assert cfg.lr == 0.1 and cfg.sinkhorn_iters == 10
    assert (cfg.v_min, cfg.v_max) == (0.1, 0.5)
    assert (cfg.nu_min, cfg.nu_max) == (1e-8, 1.0)


def test_flag_overrides_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"lr": 0.1, "seed": 4}')
    cfg = parse_config(p, {"lr": parse_override("lr", "0.01")})
    assert cfg.lr == 0.01 and cfg.seed == 4


def test_override_parsing():
    assert parse_override("sigmas", "0.1,0.5") == [0.1, 0.5]
    assert parse_override("sigmas", "[0.1, 0.5]") == [0.1, 0.5]
    assert parse_override("transforms", "rounding") == "rounding"
    assert parse_config(None, {"transforms": "rounding"}).transforms == ["rounding"]
    assert parse_config(None, {"steps": 3.0}).steps == 3


def test_inverted_v_bounds_rejected():
    with pytest.raises(ValidationError, match="v_min"):
        parse_config(None, {"v_min": 0.6, "v_max": 0.5})


@pytest.mark.parametrize("field,value", [("lr", -1.0), ("decay", 1.5), ("steps", 0),
                                         ("transforms", ["bogus"]), ("n", 9),
                                         ("experiment", "nope"), ("nu_min", 2.0)])
def test_out_of_range_fields_rejected(field, value):
    with pytest.raises(ValidationError, match=field.split("_")[0]):
        parse_config(None, {field: value})


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"learning_rate": 0.1}')
    with pytest.raises(ValidationError, match="learning_rate"):
        parse_config(p)
    with pytest.raises(ValidationError):
        parse_override("bogus", "1")


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "lr": 0.1,,\n}')
    with pytest.raises(ParseError, match="line 2"):
        parse_config(p)
    with pytest.raises(ParseError):
        parse_config(tmp_path / "missing.json")


def test_config_error_exit_code(tmp_path, capsys):
    code = main(["--v-min", "0.6", "--v-max", "0.5", "--out", str(tmp_path)])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ValidationError" and "v_min" in err["message"]


def test_matching_row_count_contract(tmp_path):
    out = tmp_path / "m"
    code = main(["--experiment", "matching", "--reps", "20", "--sigmas", "0.5", "--out", str(out)]
                + CHEAP)
    assert code == 0
    rows = read_rows(out / "results.csv")
    assert rows[0] == ["experiment", "method", "repetition", "seed", "metric", "value", "wall_ms"]
    assert len(rows) - 1 == 20 * (2 + 5)
    for name in ("summary.json", "elbo_trace.csv", "resolved_config.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["repetitions"] == 20
    trace = read_rows(out / "elbo_trace.csv")
    assert len(trace) - 1 == 20 * 2 * 2


def test_rerun_and_parallel_are_byte_identical(tmp_path):
    args = ["--reps", "3", "--sigmas", "0.25,0.75", "--seed", "7"] + CHEAP
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert main(args + ["--out", str(tmp_path / "c"), "--parallel", "3"]) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    assert a == (tmp_path / "c" / "results.csv").read_bytes()


def test_resolved_config_reproduces_run(tmp_path):
    assert main(["--reps", "2", "--sigmas", "0.5", "--out", str(tmp_path / "a")] + CHEAP) == 0
    resolved = tmp_path / "a" / "resolved_config.json"
    assert main(["--config", str(resolved), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == \
        (tmp_path / "b" / "results.csv").read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PERMVI_OUT", str(tmp_path / "env"))
    assert main(["--experiment", "transform-diagnostics", "--reps", "1", "--n", "3"]) == 0
    assert (tmp_path / "env" / "results.csv").exists()


def test_infeasible_constraint_file_fails_cleanly(tmp_path, capsys):
    cfile = tmp_path / "c.txt"
    cfile.write_text("3\n1 0 0\n1 0 0\n1 1 1\n")
    code = main(["--experiment", "lds", "--reps", "1", "--lds-n", "3", "--num-known", "0",
                 "--T", "10", "--constraints-path", str(cfile), "--out", str(tmp_path / "o")])
    assert code != 0
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "InfeasibleMatching"
    assert err["experiment"] == "lds" and err["seed"] == 0


def test_lds_run_with_constraint_file(tmp_path):
    cfile = tmp_path / "c.txt"
    cfile.write_text("4\n1 1 0 0\n1 1 0 0\n0 0 1 1\n0 0 1 1\n")
    code = main(["--experiment", "lds", "--reps", "1", "--lds-n", "4", "--num-known", "0",
                 "--T", "20", "--worms", "1", "--lds-methods", "map,rounding",
                 "--outer-iters", "2", "--inner-steps", "2", "--constraints-path", str(cfile),
                 "--out", str(tmp_path / "o")])
    assert code == 0
    rows = read_rows(tmp_path / "o" / "results.csv")[1:]
    assert len(rows) == 2
    assert all("tol=file" in r[1] for r in rows)


def test_categorical_limit_experiment(tmp_path):
    code = main(["--experiment", "categorical-limit", "--reps", "2", "--limit-samples", "2000",
                 "--out", str(tmp_path)])
    assert code == 0
    rows = read_rows(tmp_path / "results.csv")[1:]
    assert len(rows) == 2 * (4 + 1)
