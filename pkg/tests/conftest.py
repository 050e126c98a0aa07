import numpy as np
import pytest

import gridofo
from gridofo import powerflow
from gridofo.network import model_from_dict


def data(name):
    return gridofo.data_path(name)


@pytest.fixture(scope="session")
def two_bus():
    return gridofo.load_scenario(data("two_bus.json"))


@pytest.fixture(scope="session")
def feeder15():
    return gridofo.load_scenario(data("feeder15.json"))


@pytest.fixture(params=["two_bus.json", "feeder15.json"], scope="session")
def fixture_scenario(request):
    return gridofo.load_scenario(data(request.param))


def three_bus_dict(**extra):
    base = {
        "buses": 3,
        "slack": 0,
        "lines": [{"from": 0, "to": 1, "r": 0.02, "x": 0.06, "b": 0.03},
                  {"from": 1, "to": 2, "r": 0.03, "x": 0.05}],
        "inputs": [{"bus": 2, "kind": "P"}, {"bus": 2, "kind": "Q"}, {"bus": 0, "kind": "Vslack"}],
        "disturbances": [{"bus": 1, "kind": "P"}, {"bus": 1, "kind": "Q"}],
        "bounds": {"inputs": {"lower": [0, -0.3, 0.95], "upper": [0.6, 0.3, 1.05]},
                   "disturbances": {"lower": [-1, -0.5], "upper": [0, 0]}},
    }
    base.update(extra)
    return base


@pytest.fixture
def three_bus():
    return model_from_dict(three_bus_dict())


def random_feasible_point(model, rng, load_scale=0.5):
    """Random (x, u, d) with x the exact power-flow solution."""
    u = rng.uniform(model.u_lo, model.u_hi)
    d = load_scale * rng.uniform(np.maximum(model.d_lo, -1.0), np.minimum(model.d_hi, 0.0))
    x, _ = powerflow.newton_solve(model, None, u, d)
    return x, u, d


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
