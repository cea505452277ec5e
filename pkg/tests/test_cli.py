import csv

import pytest

from vedsim import cli, veds
from vedsim.harness import ExperimentConfig, dump_config


@pytest.fixture
def config_file(tmp_path):
    cfg = ExperimentConfig.from_dict({"scenario": {"n_vehicles": 10, "speed": 25.0}})
    p = tmp_path / "exp.yaml"
    p.write_text(dump_config(cfg))
    return p


def test_run_command(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(config_file), "--seed", "2", "--out", str(out), "--slot-trace"]) == 0
    assert (out / "rounds.csv").exists() and (out / "slots.csv").exists()
    with open(out / "rounds.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["seed"] for r in rows] == ["2"]
    assert "rounds.csv" in capsys.readouterr().out


def test_sweep_command(tmp_path, config_file, capsys):
    out = tmp_path / "sw"
    rc = cli.main(["sweep", "--config", str(config_file), "--axis", "alpha", "--values", "1,4",
                   "--seeds", "1", "--out", str(out)])
    assert rc == 0
    assert capsys.readouterr().out.count("alpha=") == 2


def test_bad_values_rejected(config_file):
    with pytest.raises(SystemExit):
        cli.main(["sweep", "--config", str(config_file), "--axis", "V", "--values", "a,b", "--out", "x"])


def test_missing_config_is_an_error(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_verify_fast_passes(capsys):
    assert cli.main(["verify", "--level", "fast"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 7 and "FAIL" not in out


def test_verify_catches_sign_error_in_dsigma(monkeypatch, capsys):
    good = veds.dsigma
    monkeypatch.setattr(veds, "dsigma", lambda z, a, Q: -good(z, a, Q))
    assert cli.main(["verify", "--level", "fast"]) == 1
    lines = capsys.readouterr().out.splitlines()
    dt_line = next(l for l in lines if "dt-closed-form" in l)
    assert dt_line.startswith("FAIL")
