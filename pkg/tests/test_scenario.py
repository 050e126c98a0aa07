import json

import numpy as np
import pytest

import gridofo
from gridofo.errors import ConfigError
from gridofo.scenario import load_scenario, scenario_from_dict


def two_bus_data():
    return json.loads(gridofo.data_path("two_bus.json").read_text())


def test_bundled_fixtures_load():
    for name in ("two_bus.json", "feeder15.json", "reference.json", "step_event.json",
                 "overvoltage_ramp.json", "pf_ramp.json", "ekf_constant.json", "slow_ramp.json"):
        sc = load_scenario(gridofo.data_path(name))
        assert sc.d_profile.shape == (sc.horizon, sc.model.n_d)


def test_feeder15_shape(feeder15):
    m = feeder15.model
    assert m.n_buses == 15
    assert sum(ch.kind in "PQ" for ch in m.inputs) == 6
    assert m.n_d == 8


def test_default_u_ref(two_bus):
    np.testing.assert_array_equal(two_bus.cfg.u_ref, [1.0, 0.0, 1.0])


def test_overrides_and_controller():
    sc = load_scenario(gridofo.data_path("two_bus.json"), seed=3, controller="pg", horizon=10)
    assert (sc.seed, sc.controller, sc.horizon) == (3, "pg", 10)
    with pytest.raises(ConfigError, match="controller"):
        sc.with_overrides(controller="lqr")


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ConfigError, match="nope.json"):
        load_scenario(tmp_path / "nope.json")


def test_profile_shorter_than_horizon(tmp_path):
    (tmp_path / "loads.csv").write_text("load_P1,load_Q1\n-0.1,-0.05\n-0.1,-0.05\n")
    data = two_bus_data()
    data["disturbances"] = "loads.csv"
    data["horizon"] = 5
    with pytest.raises(ConfigError, match="profile length"):
        scenario_from_dict(data, tmp_path)


def test_limit_profile_outside_installed_box():
    data = two_bus_data()
    data["limits"] = {"upper": {"P1": 2.0}}
    with pytest.raises(ConfigError, match="bound ordering"):
        scenario_from_dict(data)


def test_crossing_limit_profiles():
    data = two_bus_data()
    data["limits"] = {"lower": {"P1": 0.8}, "upper": {"P1": 0.5}}
    with pytest.raises(ConfigError, match="bound ordering"):
        scenario_from_dict(data)


def test_network_by_path(tmp_path):
    data = two_bus_data()
    (tmp_path / "net.json").write_text(json.dumps(data["network"]))
    data["network"] = "net.json"
    sc = scenario_from_dict(data, tmp_path)
    assert sc.model.n_buses == 2


@pytest.mark.parametrize("key, value, msg", [("horizon", 0, "horizon"), ("inner_steps", 0, "inner steps"),
                                             ("oracle_target", "both", "oracle_target"), ("z0", "cold", "z0")])
def test_invalid_scalars(key, value, msg):
    data = two_bus_data()
    data[key] = value
    with pytest.raises(ConfigError, match=msg):
        scenario_from_dict(data)
