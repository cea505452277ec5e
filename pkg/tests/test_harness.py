import csv
import filecmp

import numpy as np
import pytest

from vedsim import harness
from vedsim.errors import ConfigurationError


def small_config(**run):
    cfg = harness.ExperimentConfig.from_dict({
        "scenario": {"n_vehicles": 12, "speed": 25.0},
        "flsim": {"rounds": 2},
        "run": run,
    })
    return cfg


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_config_round_trip(tmp_path):
    cfg = small_config(seeds=3, scheduler="v2i")
    p = tmp_path / "c.yaml"
    p.write_text(harness.dump_config(cfg))
    assert harness.load_config(p) == cfg


@pytest.mark.parametrize("data", [
    {"nonsense": {}},
    {"scenario": {"n_vehicle": 3}},
    {"run": {"scheduler": "magic"}},
    {"run": {"jobs": 0}},
])
def test_bad_config_rejected(data):
    with pytest.raises(ConfigurationError):
        harness.ExperimentConfig.from_dict(data)


def test_override_unknown_field():
    with pytest.raises(ConfigurationError):
        harness.override(harness.ExperimentConfig(), "veds", "beta", 1.0)


def test_streams_are_independent_of_each_other():
    a = harness.rng_streams(5)
    b = harness.rng_streams(5, names=("channel",))
    assert a["channel"].random() == b["channel"].random()
    assert harness.rng_streams(5)["sgd"].random() != harness.rng_streams(6)["sgd"].random()


def test_run_writes_one_row_per_round(tmp_path):
    cfg = small_config()
    paths = harness.run(cfg, str(tmp_path), seeds=[0], slot_trace=True)
    rounds = _rows(paths["rounds"])
    assert len(rounds) == cfg.flsim.rounds
    assert rounds[0]["schema"] == harness.SCHEMA
    assert "total_energy [J]" in rounds[0]
    n_slots = sum(int(r["slots"]) for r in rounds)
    assert len(_rows(paths["slots"])) == n_slots
    vehicles = _rows(paths["vehicles"])
    assert len(vehicles) == cfg.flsim.rounds * cfg.scenario.n_vehicles
    assert (tmp_path / "config.yaml").exists()
    for r in rounds:
        assert int(r["successes"]) <= int(r["optimal_upper"]) <= int(r["n_sov"])


def test_seed_count_gives_rows(tmp_path):
    cfg = small_config()
    paths = harness.run(cfg, str(tmp_path), seeds=range(3))
    assert len(_rows(paths["rounds"])) == 3 * cfg.flsim.rounds


def test_same_seed_same_bytes(tmp_path):
    cfg = small_config()
    a = harness.run(cfg, str(tmp_path / "a"), seeds=[4], slot_trace=True)
    b = harness.run(cfg, str(tmp_path / "b"), seeds=[4], slot_trace=True)
    for k in a:
        assert filecmp.cmp(a[k], b[k], shallow=False)


def test_no_sovs_round_is_harmless(tmp_path):
    cfg = harness.override(small_config(), "scenario", "participation_prob", 0.0)
    res = harness.run_seed(cfg, 0)
    assert all(r["n_sov"] == 0 and r["successes"] == 0 for r in res.rounds)
    assert all(r["total_energy"] == 0.0 for r in res.rounds)


@pytest.mark.parametrize("scheduler", harness.SCHEDULERS)
def test_every_scheduler_runs(scheduler):
    res = harness.run_seed(small_config(scheduler=scheduler), 1)
    assert len(res.rounds) == 2
    assert all(r["scheduler"] == scheduler for r in res.rounds)
    if scheduler == "v2i":
        assert all(r["cot_slots"] == 0 for r in res.rounds)


def test_sweep_empty_values(tmp_path):
    assert harness.sweep(small_config(), "v", [], [0], str(tmp_path)) == []
    assert _rows(tmp_path / "sweep.csv") == []


def test_sweep_groups(tmp_path):
    cfg = harness.override(small_config(), "flsim", "rounds", 1)
    rows = harness.sweep(cfg, "v", [15, 25], [0], str(tmp_path))
    assert [r["value"] for r in rows] == [15.0, 25.0]
    assert len(_rows(tmp_path / "sweep_rounds.csv")) == 2
    with pytest.raises(ConfigurationError):
        harness.sweep(cfg, "gamma", [1], [0])


def test_summarize_violation_share():
    mk = lambda seed, viol: harness.SeedResult(seed, [dict(successes=1, optimal_upper=2, total_energy=0.5,
                                                           budget_violations=viol)], [], [])
    s = harness.summarize([mk(0, 0), mk(1, 2), mk(2, 0), mk(3, 0)])
    assert s["violating_seed_share"] == 0.25
    assert s["mean_successes"] == 1.0
    assert np.isnan(harness.summarize([])["mean_successes"])
