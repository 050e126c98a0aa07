"""Polar power-flow residual, Jacobians, Newton and online solvers.

Sign convention (used everywhere, including the oracles in the tests)::

    h(x, u, d) = [P_spec - P_inj ; Q_spec - Q_inj]   over non-slack buses

with P rows first, ``S_spec`` assembled from the input/disturbance channel
maps and ``S_inj = V * conj(Y V)``.  The state is ``x = [vm, va]`` over the
non-slack buses; the slack bus has angle 0 and magnitude taken from the
``Vslack`` input channel.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .errors import PowerFlowError
from .network import GridModel, assemble_injections

PIVOT_TOL = 1e-12
DEFAULT_RESIDUAL_RADIUS = 1.0


@dataclass
class PfJacobians:
    Hx: np.ndarray
    Hu: np.ndarray
    Hd: np.ndarray


def flat_start(model: GridModel) -> np.ndarray:
    m = model.n_buses - 1
    return np.concatenate([np.ones(m), np.zeros(m)])


def split_state(model: GridModel, x):
    m = model.n_buses - 1
    x = np.asarray(x, dtype=float)
    if x.shape != (2 * m,):
        raise ValueError(f"state must have length {2 * m}, got {x.shape}")
    return x[:m], x[m:]


def bus_voltages(model: GridModel, x, u) -> np.ndarray:
    """Complex voltage at every bus."""
    vm, va = split_state(model, x)
    V = np.empty(model.n_buses, dtype=complex)
    V[model.pq_buses] = vm * np.exp(1j * va)
    V[model.slack_bus] = float(u[model.slack_input])
    return V


def injected_power(model: GridModel, x, u) -> np.ndarray:
    V = bus_voltages(model, x, u)
    return V * np.conj(model.Y @ V)


def residual(model: GridModel, x, u, d) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    mis = (assemble_injections(model, u, d) - injected_power(model, x, u))[model.pq_buses]
    return np.concatenate([mis.real, mis.imag])


def _dS_dV(model: GridModel, V: np.ndarray):
    """Derivatives of bus injections w.r.t. voltage magnitudes and angles (all buses)."""
    Y = model.Y
    I = Y @ V
    Vnorm = V / np.abs(V)
    dS_dVm = V[:, None] * np.conj(Y * Vnorm[None, :]) + np.diag(np.conj(I) * Vnorm)
    dS_dVa = 1j * V[:, None] * np.conj(np.diag(I) - Y * V[None, :])
    return dS_dVm, dS_dVa


def _selection(model: GridModel, M: np.ndarray) -> np.ndarray:
    rows = M[model.pq_buses]
    return np.vstack([rows.real, rows.imag])


def jacobians(model: GridModel, x, u, d) -> PfJacobians:
    """Analytic blocks of the residual Jacobian."""
    u = np.asarray(u, dtype=float)
    V = bus_voltages(model, x, u)
    dVm, dVa = _dS_dV(model, V)
    pq = model.pq_buses
    ix = np.ix_(pq, pq)
    Hx = -np.block([[dVm[ix].real, dVa[ix].real], [dVm[ix].imag, dVa[ix].imag]])
    Hu = _selection(model, model.input_map).copy()
    col = dVm[pq, model.slack_bus]
    Hu[:, model.slack_input] = -np.concatenate([col.real, col.imag])
    Hd = _selection(model, model.disturbance_map).copy()
    return PfJacobians(Hx=Hx, Hu=Hu, Hd=Hd)


def factorize(A: np.ndarray):
    """LU factors of ``A``; raises PowerFlowError when a pivot falls below PIVOT_TOL."""
    if not np.all(np.isfinite(A)):
        raise PowerFlowError("jacobian singular: non-finite entries")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(A, check_finite=False)
    pivot = np.min(np.abs(np.diag(lu)))
    if pivot < PIVOT_TOL:
        raise PowerFlowError(f"jacobian singular (min pivot {pivot:.3e})")
    return lu, piv


def solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    return lu_solve(factorize(A), b, check_finite=False)


def _check_regime(model: GridModel, x) -> None:
    vm, _ = split_state(model, x)
    if not np.all(np.isfinite(x)) or np.any(vm <= 0):
        raise PowerFlowError("left the high-voltage regime (non-positive or non-finite magnitude)")


def newton_solve(model: GridModel, x0, u, d, tol: float = 1e-10, max_iter: int = 30,
                 residuals: list | None = None):
    """Solve ``h(x, u, d) = 0`` by plain Newton iterations from ``x0``.

    ``x0=None`` means flat start. If ``residuals`` is a list, the infinity
    norm of the residual before every iteration (and at exit) is appended.

    Returns
    -------
    (x, iterations)
    """
    x = flat_start(model) if x0 is None else np.array(x0, dtype=float)
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    for k in range(max_iter + 1):
        h = residual(model, x, u, d)
        err = np.max(np.abs(h)) if h.size else 0.0
        if residuals is not None:
            residuals.append(err)
        if err <= tol:
            return x, k
        if k == max_iter or not np.isfinite(err) or err > 1e6:
            break
        J = jacobians(model, x, u, d).Hx
        x = x - solve(J, h)
        _check_regime(model, x)
    raise PowerFlowError(f"newton did not converge in {max_iter} iterations (last |h|_inf = {err:.3e})")


def online_pf_step(model: GridModel, z, u_next, u, d_next, d, N: int = 1,
                   residual_radius: float | None = DEFAULT_RESIDUAL_RADIUS) -> np.ndarray:
    """Sensitivity-conditioned online power-flow update with ``N`` inner steps.

    Each inner step is a 1/N-scaled Newton step along the linear
    interpolation of (u, d); with ``N=1`` it is a single Newton step plus the
    feed-forward terms for ``u_next - u`` and ``d_next - d``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    z = np.array(z, dtype=float)
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    du = np.asarray(u_next, dtype=float) - u
    dd = np.asarray(d_next, dtype=float) - d
    for k in range(N):
        uk = u + (k / N) * du
        dk = d + (k / N) * dd
        h = residual(model, z, uk, dk)
        if residual_radius is not None and np.linalg.norm(h) > residual_radius:
            raise PowerFlowError(
                f"online power flow residual {np.linalg.norm(h):.3e} exceeds radius {residual_radius}"
            )
        J = jacobians(model, z, uk, dk)
        rhs = h + J.Hu @ du + J.Hd @ dd
        z = z - solve(J.Hx, rhs) / N
        _check_regime(model, z)
    return z


def sensitivities(model: GridModel, x, u, d):
    """Solution-map sensitivities ``(-Hx^-1 Hu, -Hx^-1 Hd)`` at ``x``."""
    J = jacobians(model, x, u, d)
    lu = factorize(J.Hx)
    rhs = np.hstack([J.Hu, J.Hd])
    S = -lu_solve(lu, rhs, check_finite=False)
    return S[:, : model.n_u], S[:, model.n_u:]
