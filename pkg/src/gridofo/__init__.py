"""Online feedback optimization for distribution grids with an online power-flow solver."""
from .errors import (
    ConfigError,
    EstimationError,
    GridOfoError,
    NumericalError,
    OracleError,
    PowerFlowError,
    QpInfeasibleError,
    QpMaxIterError,
)
from .network import Channel, GridModel, Line, load_network, model_from_dict
from .ofo import OfoConfig, Theta, pg_operator, qp_operator
from .oracle import OpfSolution, brute_force_opf, solve_acopf
from .powerflow import newton_solve, online_pf_step, sensitivities
from .scenario import Scenario, load_scenario, scenario_from_dict
from .sim import ScenarioTrace, SimulationError, compare, metrics, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Channel", "ConfigError", "EstimationError", "GridModel", "GridOfoError", "Line",
    "NumericalError", "OfoConfig", "OpfSolution", "OracleError", "PowerFlowError",
    "QpInfeasibleError", "QpMaxIterError", "Scenario", "ScenarioTrace", "SimulationError",
    "Theta", "brute_force_opf", "compare", "load_network", "load_scenario", "metrics",
    "model_from_dict", "newton_solve", "online_pf_step", "pg_operator", "qp_operator",
    "run_scenario", "scenario_from_dict", "sensitivities", "solve_acopf",
]


def data_path(name: str):
    """Path of a bundled fixture or scenario file."""
    from importlib.resources import files

    return files(__name__).joinpath("data", name)
