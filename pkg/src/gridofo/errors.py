"""Exception hierarchy shared by the library and the CLI."""


class GridOfoError(Exception):
    """Base class for all package errors."""


class ConfigError(GridOfoError, ValueError):
    """Invalid fixture, scenario or argument. Maps to CLI exit code 2."""


class NumericalError(GridOfoError, ArithmeticError):
    """A solver failed numerically. Maps to CLI exit code 3."""


class PowerFlowError(NumericalError):
    """Singular power-flow Jacobian, divergence or loss of the high-voltage regime."""


class QpInfeasibleError(NumericalError):
    """The linearized feasible set of a QP is empty."""


class QpMaxIterError(NumericalError):
    """The active-set QP solver exhausted its iteration budget."""


class EstimationError(NumericalError):
    """Kalman update could not be computed (degenerate prior, non-finite data)."""


class OracleError(NumericalError):
    """The ground-truth OPF solver failed to converge or found no feasible point."""
