import csv
import json
import math

import pytest

from qsg import cli, experiments
from qsg.config import ConfigError, ExperimentConfig, load_config, parse_config_text
from qsg.errors import NumericError


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_rows(path):
    with open(path / "results.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_types_and_comments():
    cfg = parse_config_text(
        "experiment = exact\nmodel = transverse_sk  # inline\nn_sites = 3\n"
        "beta = 0.5, 1\nlambda = 0.25\nmaster_seed = 0x10\n"
    )
    assert cfg.beta == [0.5, 1.0] and cfg.lam == 0.25 and cfg.master_seed == 16
    assert cfg.resolved()["lambda"] == 0.25 and cfg.resolved()["schema_version"] == 1


@pytest.mark.parametrize("text,field", [
    ("experiment = exact\nmodel = transverse_sk\nn_sites = 2\n", "beta"),
    ("experiment = exact\nmodel = transverse_sk\nn_sites = two\nbeta = 1\n", "n_sites"),
    ("experiment = exact\nmodel = x\nn_sites = 2\nbeta = 1\nfoo = 3\n", "foo"),
    ("experiment = nope\n", "experiment"),
    ("model = transverse_sk\n", "experiment"),
    ("experiment = concentration\nmodel = transverse_sk\nn_sites = 2\nbeta = 1\n"
     "n_samples = 10\nu_grid = 1\nu_scale = weird\n", "u_scale"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert info.value.field == field


def test_experiment_mismatch(tmp_path):
    p = write(tmp_path, "experiment = exact\nmodel = field_only\nn_sites = 1\nbeta = 1\n")
    with pytest.raises(ConfigError):
        load_config(p, "trotter")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg", "exact")


def test_exact_example(tmp_path):
    p = write(tmp_path, "model = field_only\nn_sites = 1\nlambda = 1\nbeta = 2\n")
    out = tmp_path / "out"
    assert cli.main(["exact", "--config", str(p), "--out", str(out)]) == 0
    rows = [r for r in read_rows(out) if r["quantity"] == "log_partition"]
    assert len(rows) == 1
    assert abs(float(rows[0]["value"]) - math.log(2 * math.cosh(2))) <= 1e-12
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "completed"
    assert manifest["config"]["beta"] == [2.0]


def test_universality_beta_zero(tmp_path):
    p = write(tmp_path, "model = transverse_sk\nn_sites = 2\nbeta = 0\ndist = rademacher\n"
                        "n_samples = 20\n")
    out = tmp_path / "u"
    assert cli.main(["universality", "--config", str(p), "--out", str(out)]) == 0
    gap = [r for r in read_rows(out) if r["quantity"] == "gap_per_site"][0]
    assert float(gap["value"]) == 0.0 and gap["holds"] == "true"
    derived = json.loads((out / "manifest.json").read_text())["derived"]
    assert derived["dist"]["abs_third"] == 1.0 and derived["model"]["n_terms"] == 4


def test_missing_beta_is_usage_error(tmp_path, capsys):
    p = write(tmp_path, "model = transverse_sk\nn_sites = 2\n")
    assert cli.main(["exact", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "beta" in capsys.readouterr().err


def test_bad_arguments_are_usage_errors(tmp_path):
    assert cli.main(["no-such-experiment"]) == 2
    assert cli.main(["exact", "--workers", "0"]) == 2
    assert cli.main(["exact", "--seed", "-3"]) == 2
    p = write(tmp_path, "model = transverse_sk\nn_sites = 20\nbeta = 1\n")
    assert cli.main(["exact", "--config", str(p), "--out", str(tmp_path / "cap")]) == 2


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg_dir = tmp_path / "from_config"
    env_dir = tmp_path / "from_env"
    flag_dir = tmp_path / "from_flag"
    p = write(tmp_path, f"output_dir = {cfg_dir}\n")
    assert cli.main(["ibp", "--config", str(p)]) == 0
    assert (cfg_dir / "results.csv").exists()
    monkeypatch.setenv(cli.OUTPUT_ENV, str(env_dir))
    assert cli.main(["ibp", "--config", str(p)]) == 0
    assert (env_dir / "results.csv").exists()
    assert cli.main(["ibp", "--config", str(p), "--out", str(flag_dir)]) == 0
    assert (flag_dir / "results.csv").exists()


def test_assertion_failure_exit_code(tmp_path, monkeypatch):
    def failing(cfg, rows):
        rows.append(experiments.Row("m", 1, 1.0, "c", "q", 2.0, None, 1.0, False))
        return {}

    monkeypatch.setitem(experiments.EXPERIMENT_RUNNERS, "ibp", failing)
    out = tmp_path / "f"
    assert cli.main(["ibp", "--out", str(out)]) == 4
    assert json.loads((out / "manifest.json").read_text())["status"] == "completed_with_violations"


def test_numeric_failure_keeps_partial_results(tmp_path, monkeypatch):
    def broken(cfg, rows):
        rows.append(experiments.Row("m", 1, 1.0, "c", "q", 2.0))
        raise NumericError("non-finite sample at replica 7")

    monkeypatch.setitem(experiments.EXPERIMENT_RUNNERS, "ibp", broken)
    out = tmp_path / "n"
    assert cli.main(["ibp", "--out", str(out), "--seed", "42"]) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed" and "replica 7" in manifest["error"]
    assert manifest["config"]["master_seed"] == 42
    assert len(read_rows(out)) == 1


def test_manifest_written_before_results(tmp_path, monkeypatch):
    seen = {}

    def probe(cfg, rows):
        m = json.loads((tmp_path / "m" / "manifest.json").read_text())
        seen["status"] = m["status"]
        seen["csv"] = (tmp_path / "m" / "results.csv").exists()
        return {}

    monkeypatch.setitem(experiments.EXPERIMENT_RUNNERS, "ibp", probe)
    assert cli.main(["ibp", "--out", str(tmp_path / "m")]) == 0
    assert seen == {"status": "running", "csv": False}


def test_rerun_is_byte_identical(tmp_path):
    p = write(tmp_path, "model = transverse_sk\nn_sites = 2\nbeta = 0.5\ndist = uniform_scaled\n"
                        "n_samples = 300\n")
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.main(["universality", "--config", str(p), "--out", str(a), "--seed", "5"]) == 0
    assert cli.main(["universality", "--config", str(p), "--out", str(b), "--seed", "5"]) == 0
    assert cli.main(["universality", "--config", str(p), "--out", str(c), "--seed", "5",
                     "--workers", "2"]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    assert (a / "results.csv").read_bytes() == (c / "results.csv").read_bytes()


def test_pressure_trend_field_only(tmp_path):
    cfg = ExperimentConfig("pressure-trend", model="field_only", n_grid=[2, 3, 4], beta=[0.7, 0.0],
                           lam=0.9, n_samples=10)
    status, rows = experiments.run(cfg, tmp_path / "p")
    assert status == "ok"
    for r in rows:
        if r.quantity == "alpha_per_site":
            want = math.log(2 * math.cosh(r.beta * 0.9))
            assert abs(r.value - want) <= 1e-13 and r.stderr == 0.0
        else:
            assert abs(r.value) <= 1e-13
    with pytest.raises(ValueError):
        experiments.run(ExperimentConfig("pressure-trend", model="field_only", n_grid=[3, 2],
                                         beta=[1.0]), tmp_path / "q")


def test_float_formatting_round_trips():
    for v in (math.pi, 1e-300, -2.5e17, 0.1 + 0.2):
        assert float(experiments._fmt(v)) == v
    assert experiments._fmt(None) == "" and experiments._fmt(True) == "true"
