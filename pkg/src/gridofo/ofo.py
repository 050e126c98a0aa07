"""Online feedback optimization operators.

Both operators act on a fixed operating point ``x`` (exact or the online
power-flow approximation) and a parameter tuple ``theta = (d, lo, hi)``:

* :func:`qp_operator` - one linearized QP step with curvature ``B = eta*I``
  and the voltage limits linearized through the solution-map sensitivity.
* :func:`pg_operator` - projected gradient on the quadratic-penalty cost,
  the soft-constraint baseline.

The cost is ``f(u) = 1/2 |u - u_ref|^2`` and the grid constraint
``gbar(x) = [vm - vmax ; vmin - vm] <= 0`` over non-slack buses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from . import powerflow
from .errors import ConfigError, QpInfeasibleError
from .network import GridModel
from .qp import QpDuals, QpProblem, solve_qp

SOFT_SLACK_CURVATURE = 1e-8


@dataclass
class OfoConfig:
    u_ref: np.ndarray
    eta: float = 5.0
    vmin: float = 0.94
    vmax: float = 1.06
    zeta: float = 1e3
    alpha: float | None = None
    soft_mode: bool = True
    controller: str = "qp"
    B: np.ndarray | None = None
    qp_tol: float = 1e-9

    def __post_init__(self):
        self.u_ref = np.asarray(self.u_ref, dtype=float)
        if not self.eta > 0:
            raise ConfigError("eta must be > 0")
        if not self.vmin < self.vmax:
            raise ConfigError("vmin must be < vmax")
        if not self.zeta > 0:
            raise ConfigError("zeta must be > 0")
        if self.alpha is not None and not self.alpha >= 0:
            raise ConfigError("alpha must be >= 0")
        if self.controller not in ("qp", "pg", "open_loop"):
            raise ConfigError(f"controller must be 'qp', 'pg' or 'open_loop', got {self.controller!r}")
        if self.B is not None:
            self.B = np.asarray(self.B, dtype=float)
            if self.B.shape != (self.u_ref.size,) * 2:
                raise ConfigError("B must be n_u x n_u")
            if np.linalg.eigvalsh(0.5 * (self.B + self.B.T)).min() <= 0:
                raise ConfigError("B must be positive definite")

    def curvature(self) -> np.ndarray:
        return self.B if self.B is not None else self.eta * np.eye(self.u_ref.size)


@dataclass
class Theta:
    """Time-varying problem parameters: disturbance and input box."""

    d: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.d, self.lo, self.hi])


def cost(u, cfg: OfoConfig) -> float:
    e = np.asarray(u, dtype=float) - cfg.u_ref
    return 0.5 * float(e @ e)


def cost_grad(u, cfg: OfoConfig) -> np.ndarray:
    return np.asarray(u, dtype=float) - cfg.u_ref


def voltage_constraints(model: GridModel, x, cfg: OfoConfig) -> np.ndarray:
    vm, _ = powerflow.split_state(model, x)
    return np.concatenate([vm - cfg.vmax, cfg.vmin - vm])


def voltage_constraint_jacobian(model: GridModel) -> np.ndarray:
    m = model.n_buses - 1
    eye = np.eye(m)
    zero = np.zeros((m, m))
    return np.block([[eye, zero], [-eye, zero]])


def constraint_rows(model: GridModel, x, u, d, cfg: OfoConfig):
    """Linearized voltage limits as ``A @ (u+ - u) <= b``."""
    Sx_u, _ = powerflow.sensitivities(model, x, u, d)
    m = model.n_buses - 1
    S_vm = Sx_u[:m]
    A = np.vstack([S_vm, -S_vm])
    b = -voltage_constraints(model, x, cfg)
    return A, b


def _soft_problem(H, c, A, b, lo, hi, zeta):
    n = c.size
    m = b.size
    Hs = np.zeros((n + m, n + m))
    Hs[:n, :n] = H
    Hs[n:, n:] = SOFT_SLACK_CURVATURE * np.eye(m)
    qp = QpProblem(
        Hs,
        np.concatenate([c, np.full(m, zeta)]),
        np.hstack([A, -np.eye(m)]),
        b,
        np.concatenate([lo, np.zeros(m)]),
        np.concatenate([hi, np.full(m, np.inf)]),
    )
    x0 = np.concatenate([np.clip(np.zeros(n), lo, hi), np.zeros(m)])
    x0[n:] = np.maximum(A @ x0[:n] - b, 0.0)
    return qp, x0


def qp_operator(model: GridModel, u, x, theta: Theta, cfg: OfoConfig, return_duals: bool = False):
    """One QP-based OFO update ``u+ = u + argmin_delta ...``.

    When the linearized problem is infeasible and ``cfg.soft_mode`` is set,
    the voltage rows are relaxed by nonnegative slacks priced at
    ``cfg.zeta`` per unit (an l1 exact penalty). With ``return_duals`` the
    result is ``(u_plus, duals, relaxed)``.
    """
    u = np.asarray(u, dtype=float)
    A, b = constraint_rows(model, x, u, theta.d, cfg)
    H = cfg.curvature()
    c = cost_grad(u, cfg)
    lo = theta.lo - u
    hi = theta.hi - u
    relaxed = False
    try:
        delta, duals = solve_qp(QpProblem(H, c, A, b, lo, hi), tol=cfg.qp_tol)
    except QpInfeasibleError:
        if not cfg.soft_mode:
            raise
        relaxed = True
        qp, x0 = _soft_problem(H, c, A, b, lo, hi, cfg.zeta)
        sol, sduals = solve_qp(qp, tol=cfg.qp_tol, x0=x0)
        n = u.size
        delta = sol[:n]
        duals = QpDuals(
            ineq=sduals.ineq,
            lower=sduals.lower[:n],
            upper=sduals.upper[:n],
            iterations=sduals.iterations,
            active=sduals.active,
        )
    u_plus = np.clip(u + delta, theta.lo, theta.hi)
    if return_duals:
        return u_plus, duals, relaxed
    return u_plus


def penalty_gradient(model: GridModel, u, x, d, cfg: OfoConfig) -> np.ndarray:
    """Gradient w.r.t. u of ``1/2 sum max(gbar(x), 0)^2`` through the sensitivity."""
    Sx_u, _ = powerflow.sensitivities(model, x, u, d)
    viol = np.maximum(voltage_constraints(model, x, cfg), 0.0)
    grad_x = voltage_constraint_jacobian(model).T @ viol
    return Sx_u.T @ grad_x


def default_pg_step(model: GridModel, x, u, d, cfg: OfoConfig) -> float:
    """``1 / (1 + zeta * L)`` with ``L`` the squared spectral norm of the vm sensitivity."""
    Sx_u, _ = powerflow.sensitivities(model, x, u, d)
    m = model.n_buses - 1
    L = np.linalg.norm(Sx_u[:m], 2) ** 2
    return 1.0 / (1.0 + cfg.zeta * L)


def pg_operator(model: GridModel, u, x, theta: Theta, cfg: OfoConfig) -> np.ndarray:
    if cfg.alpha is None:
        raise ConfigError("pg_operator needs cfg.alpha (see default_pg_step)")
    u = np.asarray(u, dtype=float)
    grad = cost_grad(u, cfg) + cfg.zeta * penalty_gradient(model, u, x, theta.d, cfg)
    return np.clip(u - cfg.alpha * grad, theta.lo, theta.hi)


def penalty_cost(model: GridModel, u, x, cfg: OfoConfig) -> float:
    viol = np.maximum(voltage_constraints(model, x, cfg), 0.0)
    return cost(u, cfg) + 0.5 * cfg.zeta * float(viol @ viol)


def merit_value(model: GridModel, u, theta: Theta, cfg: OfoConfig, x=None) -> float:
    """l1 exact-penalty merit function evaluated with the exact power flow."""
    u = np.asarray(u, dtype=float)
    if x is None:
        x, _ = powerflow.newton_solve(model, None, u, theta.d)
    g = voltage_constraints(model, x, cfg)
    hinge = (
        np.maximum(g, 0.0).sum()
        + np.maximum(u - theta.hi, 0.0).sum()
        + np.maximum(theta.lo - u, 0.0).sum()
    )
    return cost(u, cfg) + cfg.zeta * float(hinge)


def kkt_residual(model: GridModel, u, theta: Theta, cfg: OfoConfig, x=None,
                 active_tol: float = 1e-5) -> float:
    """KKT residual of the frozen AC-OPF at ``u`` (exact power flow).

    Multipliers are fitted by nonnegative least squares over the nearly
    active voltage rows and box sides; the result is the max of the
    stationarity, primal infeasibility and complementarity violations.
    """
    u = np.asarray(u, dtype=float)
    if x is None:
        x, _ = powerflow.newton_solve(model, None, u, theta.d)
    g = voltage_constraints(model, x, cfg)
    Sx_u, _ = powerflow.sensitivities(model, x, u, theta.d)
    G = voltage_constraint_jacobian(model) @ Sx_u
    grad = cost_grad(u, cfg)
    n = u.size
    eye = np.eye(n)
    cols, gaps = [], []
    for i in np.flatnonzero(g >= -active_tol):
        cols.append(G[i])
        gaps.append(g[i])
    for i in range(n):
        if u[i] >= theta.hi[i] - active_tol:
            cols.append(eye[i])
            gaps.append(u[i] - theta.hi[i])
        if u[i] <= theta.lo[i] + active_tol:
            cols.append(-eye[i])
            gaps.append(theta.lo[i] - u[i])
    if cols:
        M = np.array(cols).T
        lam, _ = nnls(M, -grad)
        stat = grad + M @ lam
        comp = float(np.max(np.abs(lam * np.array(gaps))))
    else:
        stat = grad
        comp = 0.0
    primal = max(
        float(np.max(g, initial=0.0)),
        float(np.max(u - theta.hi, initial=0.0)),
        float(np.max(theta.lo - u, initial=0.0)),
        0.0,
    )
    return max(float(np.max(np.abs(stat))), primal, comp)
