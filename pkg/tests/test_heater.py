import filecmp

import numpy as np
import pytest

from mebnlearn.errors import ConfigError
from mebnlearn.heater import HeaterConfig, energy_for, generate_heater_db, run_heater_experiment
from mebnlearn.relational import write_database
from mebnlearn.scoring import parse_criteria

SMALL = HeaterConfig(n_train=200, n_test=10, seed=3)


def test_energy_arithmetic():
    cfg = HeaterConfig()
    assert energy_for(cfg, 1200.0) == 0
    assert energy_for(cfg, 1190.0) == pytest.approx(0.13, abs=1e-12)
    assert cfg.cost_per_kwh * energy_for(cfg, 1190.0) == pytest.approx(0.026, abs=1e-12)


def test_generated_layout():
    data = generate_heater_db(SMALL)
    assert {r.name for r in data.train} == {"Case", "Slab", "SensedInputTemp", "SensedOutputTemp",
                                            "Energy", "Cost", "TotalCost"}
    assert {r.name for r in data.test} == {"Case", "Slab", "SensedInputTemp", "SensedOutputTemp"}
    assert len(data.train["Slab"].rows) == 3 * 200
    assert len(data.actual_totals) == 10
    costs = {}
    for row in data.train["Slab"].as_dicts():
        costs.setdefault(row["InCase"], []).append(row["SID"])
    cost = {r["SID"]: r["Cost"] for r in data.train["Cost"].as_dicts()}
    energy = {r["SID"]: r["Energy"] for r in data.train["Energy"].as_dicts()}
    for r in data.train["TotalCost"].as_dicts():
        assert r["TotalCost"] == pytest.approx(sum(cost[s] for s in costs[r["CID"]]), rel=1e-12)
    for s in cost:
        assert cost[s] == pytest.approx(0.2 * energy[s], rel=1e-12)
    out = np.array([r["SensedOutputTemp"] for r in data.train["SensedOutputTemp"].as_dicts()])
    assert abs(out.mean() - 1200) < 0.5


def test_fixed_seed_gives_identical_files(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    write_database(generate_heater_db(SMALL).train, a)
    write_database(generate_heater_db(SMALL).train, b)
    names = sorted(p.name for p in a.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert match == names and not mismatch and not errors
    other = generate_heater_db(HeaterConfig(n_train=200, n_test=10, seed=4))
    assert other.actual_totals != generate_heater_db(SMALL).actual_totals


@pytest.mark.parametrize("values", [{"n_train": "0"}, {"sensor_variance": "-3"}, {"colour": "red"},
                                    {"n_test": "many"}])
def test_config_validation(values):
    with pytest.raises(ConfigError):
        HeaterConfig.from_mapping(values)


def test_config_from_mapping():
    cfg = HeaterConfig.from_mapping({"n_train": "50", "sensor_variance": "2.5", "seed": "9"})
    assert (cfg.n_train, cfg.sensor_variance, cfg.seed) == (50, 2.5, 9)


def test_small_experiment_report(tmp_path):
    crit = parse_criteria("avg_crps <= 1e9\nmae < 1e9")
    report = run_heater_experiment(SMALL, criteria=crit, workdir=tmp_path)
    assert len(report.cases) == 10 and report.passed
    assert report.average_crps == pytest.approx(np.mean([c.crps for c in report.cases]))
    for name in ("learned.mebn", "heater_report.txt", "heater_cases.csv", "train", "test"):
        assert (tmp_path / name).exists()
    assert "Average CRPS" in report.text()
    again = run_heater_experiment(SMALL, criteria=crit)
    assert again.text() == report.text()
