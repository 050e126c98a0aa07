"""Dense primal active-set solver for small convex QPs.

Solves::

    min  1/2 x'Hx + c'x   s.t.  A x <= b,  lo <= x <= hi

with ``H`` positive definite.  Bounds are handled as ordinary inequality
rows.  Ties in the add/drop decisions go to the lowest constraint index
(Bland's rule) so the working set cannot cycle.  A feasible starting point
is taken as ``clip(0, lo, hi)`` when it satisfies every row, otherwise it
comes from a phase-1 LP.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import QpInfeasibleError, QpMaxIterError


@dataclass
class QpProblem:
    H: np.ndarray
    c: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        self.c = np.asarray(self.c, dtype=float).reshape(n)
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(self.A.shape[0])
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float).reshape(n)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).reshape(n)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.c @ x)


@dataclass
class QpDuals:
    """Nonnegative multipliers of ``A x <= b`` and of the two bound sides."""

    ineq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    iterations: int = 0
    active: list = field(default_factory=list)

    @property
    def max(self) -> float:
        vals = np.concatenate([self.ineq, self.lower, self.upper])
        return float(vals.max()) if vals.size else 0.0


def kkt_residuals(qp: QpProblem, x, duals: QpDuals) -> dict:
    """Stationarity, primal feasibility, complementarity and dual feasibility."""
    x = np.asarray(x, dtype=float)
    grad = qp.H @ x + qp.c + qp.A.T @ duals.ineq - duals.lower + duals.upper
    slack_a = qp.b - qp.A @ x
    lo_gap = np.where(np.isfinite(qp.lo), x - qp.lo, np.inf)
    hi_gap = np.where(np.isfinite(qp.hi), qp.hi - x, np.inf)
    primal = max(
        float(np.max(-slack_a, initial=0.0)),
        float(np.max(-lo_gap, initial=0.0)),
        float(np.max(-hi_gap, initial=0.0)),
    )

    def comp(lam, gap):
        gap = np.where(np.isfinite(gap), gap, 0.0)
        return float(np.max(np.abs(lam * gap), initial=0.0))

    all_duals = np.concatenate([duals.ineq, duals.lower, duals.upper])
    return {
        "stationarity": float(np.max(np.abs(grad), initial=0.0)),
        "primal": primal,
        "complementarity": max(comp(duals.ineq, slack_a), comp(duals.lower, lo_gap), comp(duals.upper, hi_gap)),
        "dual": float(np.max(-all_duals, initial=0.0)),
    }


def _stacked_rows(qp: QpProblem):
    n = qp.n
    eye = np.eye(n)
    lo_idx = np.flatnonzero(np.isfinite(qp.lo))
    hi_idx = np.flatnonzero(np.isfinite(qp.hi))
    G = np.vstack([qp.A, eye[hi_idx], -eye[lo_idx]])
    h = np.concatenate([qp.b, qp.hi[hi_idx], -qp.lo[lo_idx]])
    return G, h, hi_idx, lo_idx


def _phase_one(G, h, n, tol):
    start = np.zeros(n)
    if np.all(G @ start <= h + tol):
        return start
    res = linprog(np.zeros(n), A_ub=G, b_ub=h, bounds=[(None, None)] * n, method="highs")
    if res.status == 2:
        raise QpInfeasibleError("qp infeasible")
    if res.status != 0:
        raise QpInfeasibleError(f"qp infeasible (phase-1 LP status {res.status}: {res.message})")
    return res.x


def _independent_subset(G, candidates, tol=1e-10):
    """Greedy lowest-index subset of rows with full row rank."""
    chosen: list[int] = []
    for i in candidates:
        trial = G[chosen + [i]]
        if np.linalg.matrix_rank(trial, tol=tol) == len(chosen) + 1:
            chosen.append(i)
    return chosen


def _eqp(H, g, Gw):
    """Solve min 1/2 p'Hp + g'p s.t. Gw p = 0; return (p, multipliers)."""
    n = H.shape[0]
    k = Gw.shape[0]
    if k == 0:
        return np.linalg.solve(H, -g), np.zeros(0)
    K = np.block([[H, Gw.T], [Gw, np.zeros((k, k))]])
    sol = np.linalg.solve(K, np.concatenate([-g, np.zeros(k)]))
    return sol[:n], sol[n:]


def solve_qp(qp: QpProblem, tol: float = 1e-9, max_iter: int = 500, x0=None):
    """Solve a strictly convex QP.

    Returns
    -------
    (x, duals)
        Primal solution and a :class:`QpDuals` record.

    Raises
    ------
    QpInfeasibleError
        The constraint set is empty.
    QpMaxIterError
        The working set did not settle within ``max_iter`` iterations.
    """
    n = qp.n
    G, h, hi_idx, lo_idx = _stacked_rows(qp)
    m_total = G.shape[0]
    if x0 is not None and np.all(G @ x0 <= h + tol):
        x = np.array(x0, dtype=float)
    else:
        x = _phase_one(G, h, n, tol)
    active0 = [i for i in range(m_total) if abs(G[i] @ x - h[i]) <= tol * max(1.0, abs(h[i]))]
    W = _independent_subset(G, active0)
    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        g = qp.H @ x + qp.c
        p, lam = _eqp(qp.H, g, G[W])
        if np.max(np.abs(p), initial=0.0) <= tol * max(1.0, np.max(np.abs(x), initial=0.0)):
            negative = [j for j, lj in enumerate(lam) if lj < -tol]
            if not negative:
                return x, _pack_duals(qp, W, lam, hi_idx, lo_idx, it)
            # Bland: drop the lowest-index constraint with a negative multiplier
            drop = min(negative, key=lambda j: W[j])
            W = W[:drop] + W[drop + 1:]
            continue
        Gp = G @ p
        alpha = 1.0
        blocking = None
        for i in range(m_total):
            if i in W or Gp[i] <= tol * 1e-3:
                continue
            step = (h[i] - G[i] @ x) / Gp[i]
            if step < alpha - 1e-14:
                alpha = max(step, 0.0)
                blocking = i
        x = x + alpha * p
        if blocking is not None:
            W = sorted(W + [blocking])
    raise QpMaxIterError(f"active-set QP hit max_iter={max_iter}")


def _pack_duals(qp, W, lam, hi_idx, lo_idx, iterations):
    m = qp.A.shape[0]
    ineq = np.zeros(m)
    upper = np.zeros(qp.n)
    lower = np.zeros(qp.n)
    for j, row in enumerate(W):
        val = max(lam[j], 0.0)
        if row < m:
            ineq[row] = val
        elif row < m + len(hi_idx):
            upper[hi_idx[row - m]] = val
        else:
            lower[lo_idx[row - m - len(hi_idx)]] = val
    return QpDuals(ineq=ineq, lower=lower, upper=upper, iterations=iterations, active=list(W))
