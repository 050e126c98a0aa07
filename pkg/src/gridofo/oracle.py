"""Ground-truth solvers for the frozen AC-OPF.

``solve_acopf`` iterates the QP operator with the exact power flow until it
reaches a fixed point (a KKT point of the OPF).  ``brute_force_opf`` is an
independent grid search with zoom refinement, usable for ``n_u <= 3``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import ofo, powerflow
from .errors import OracleError, PowerFlowError
from .network import GridModel
from .ofo import OfoConfig, Theta

FEAS_TOL = 1e-7


@dataclass
class OpfSolution:
    u_star: np.ndarray
    f_star: float
    kkt_residual: float
    active_set: list = field(default_factory=list)
    iterations: int = 0
    x_star: np.ndarray | None = None


def active_constraints(model: GridModel, u, x, theta: Theta, cfg: OfoConfig, tol: float = 1e-7) -> list:
    g = ofo.voltage_constraints(model, x, cfg)
    m = model.n_buses - 1
    labels = []
    for i in np.flatnonzero(g >= -tol):
        side = "vmax" if i < m else "vmin"
        labels.append(f"{side}@{model.pq_buses[i % m]}")
    for k, ch in enumerate(model.inputs):
        if u[k] >= theta.hi[k] - tol:
            labels.append(f"upper:{ch.name}")
        if u[k] <= theta.lo[k] + tol:
            labels.append(f"lower:{ch.name}")
    return labels


def solve_acopf(model: GridModel, theta: Theta, cfg: OfoConfig, tol: float = 1e-10,
                max_iter: int = 2000, u0=None, eta: float | None = None,
                starts: int = 0, seed: int = 0) -> OpfSolution:
    """Fixed-point iteration ``u <- T(u, chi(u, d), theta)`` with exact power flow.

    ``eta`` overrides the curvature used by the iteration (the fixed points
    do not depend on it). ``starts > 0`` adds that many random warm starts
    and returns the best KKT point found.
    """
    cfg = replace(cfg, soft_mode=True, B=None, eta=cfg.eta if eta is None else eta)
    if u0 is None:
        finite = np.isfinite(theta.lo) & np.isfinite(theta.hi)
        u0 = np.where(finite, 0.5 * (theta.lo + theta.hi), np.clip(cfg.u_ref, theta.lo, theta.hi))
    inits = [np.clip(np.asarray(u0, dtype=float), theta.lo, theta.hi)]
    rng = np.random.default_rng(seed)
    for _ in range(starts):
        inits.append(rng.uniform(theta.lo, theta.hi))
    best = None
    errors = []
    for start in inits:
        try:
            sol = _fixed_point(model, theta, cfg, start, tol, max_iter)
        except (OracleError, PowerFlowError) as exc:
            errors.append(exc)
            continue
        if best is None or sol.f_star < best.f_star:
            best = sol
    if best is None:
        raise errors[0]
    return best


def _fixed_point(model, theta, cfg, u, tol, max_iter):
    x = None
    for it in range(max_iter + 1):
        x, _ = powerflow.newton_solve(model, x, u, theta.d)
        u_plus = ofo.qp_operator(model, u, x, theta, cfg)
        if np.max(np.abs(u_plus - u)) <= tol:
            break
        u = u_plus
    else:
        raise OracleError(f"solve_acopf did not converge in {max_iter} iterations")
    u = u_plus
    x, _ = powerflow.newton_solve(model, x, u, theta.d)
    g = ofo.voltage_constraints(model, x, cfg)
    if np.max(g) > FEAS_TOL:
        raise OracleError(f"infeasible: fixed point violates voltage limits by {np.max(g):.3e}")
    return OpfSolution(
        u_star=u,
        f_star=ofo.cost(u, cfg),
        kkt_residual=ofo.kkt_residual(model, u, theta, cfg, x=x),
        active_set=active_constraints(model, u, x, theta, cfg),
        iterations=it,
        x_star=x,
    )


def brute_force_opf(model: GridModel, theta: Theta, cfg: OfoConfig, grid_resolution: int = 11,
                    tol: float = 1e-5, max_levels: int = 40, min_levels: int = 4,
                    xtol: float = 1e-6, samples: int = 500, seed: int = 0) -> OpfSolution:
    """Exhaustive grid search over the input box with zoom refinement.

    Each level evaluates a ``grid_resolution``-per-axis lattice plus
    ``samples`` seeded uniform points in the current window, keeps the best
    feasible point and zooms to +-2 lattice cells around it.  The random
    points matter when the optimum sits on a curved voltage limit: the cone
    of better feasible points is then too narrow for the lattice directions
    alone and a pure lattice stalls a few 1e-3 away from the optimum.

    Stops once the best cost changes by less than ``tol`` and the lattice
    spacing is below ``xtol`` (after ``min_levels`` levels).
    """
    n_u = model.n_u
    if n_u > 3:
        raise OracleError(f"brute_force_opf supports n_u <= 3, got {n_u}")
    if not (np.all(np.isfinite(theta.lo)) and np.all(np.isfinite(theta.hi))):
        raise OracleError("brute_force_opf needs a finite input box")
    rng = np.random.default_rng(seed)
    lo = theta.lo.copy()
    hi = theta.hi.copy()
    best_u, best_f, best_x = None, np.inf, None
    prev_f = np.inf
    for level in range(max_levels):
        axes = [np.linspace(lo[k], hi[k], grid_resolution) if hi[k] > lo[k] else np.array([lo[k]])
                for k in range(n_u)]
        lattice = np.array(list(itertools.product(*axes)))
        points = np.vstack([lattice, rng.uniform(lo, hi, size=(samples, n_u))])
        for u in points:
            f = ofo.cost(u, cfg)
            if f >= best_f:
                continue
            try:
                x, _ = powerflow.newton_solve(model, best_x, u, theta.d)
            except PowerFlowError:
                continue
            if np.max(ofo.voltage_constraints(model, x, cfg)) <= 0.0:
                best_u, best_f, best_x = u, f, x
        if best_u is None:
            raise OracleError("no feasible point on the input grid")
        width = (hi - lo) / max(grid_resolution - 1, 1)
        if level + 1 >= min_levels and abs(prev_f - best_f) < tol and np.max(width) <= xtol:
            break
        prev_f = best_f
        lo = np.maximum(theta.lo, best_u - 2 * width)
        hi = np.minimum(theta.hi, best_u + 2 * width)
    return OpfSolution(
        u_star=best_u,
        f_star=best_f,
        kkt_residual=float("nan"),
        active_set=active_constraints(model, best_u, best_x, theta, cfg, tol=1e-4),
        iterations=level + 1,
        x_star=best_x,
    )
