"""Closed-loop harness: plant, measurements, estimator, online PF and OFO.

Every step ``t`` runs, in this order:

1. measure ``y_t`` from the true state, read ``lo_t, hi_t`` and ``u_t``;
2. prior online PF step ``z_pr = F(z_{t-1}, u_t, u_{t-1}, d_hat_{t-1}+mu, d_hat_{t-1})``;
3. EKF update around ``z_pr``;
4. posterior online PF step ``z_t = F(z_pr, u_t, u_t, d_hat_t, d_hat_{t-1}+mu)``;
5. ``u_plus = T(u_t, z_t, theta_hat_t)``;
6. ``u_{t+1} = clip(u_plus, lo_{t+1}, hi_{t+1})`` and the plant is re-solved
   exactly at ``(u_{t+1}, d_{t+1})``.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimation, ofo, oracle, powerflow
from .errors import GridOfoError, NumericalError
from .ofo import Theta
from .scenario import Scenario

log = logging.getLogger(__name__)

PLANT_TOL = 1e-10
EPSILONS = (1e-2, 1e-3, 1e-4)


class SimulationError(NumericalError):
    """A numerical failure inside the loop, tagged with the step index."""

    def __init__(self, step: int, cause: Exception, state: dict):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause
        self.state = state


@dataclass
class StepRecord:
    t: int
    u: np.ndarray
    u_plus: np.ndarray
    d: np.ndarray
    d_hat: np.ndarray
    x: np.ndarray
    z: np.ndarray
    z_pr: np.ndarray
    y: np.ndarray
    h_norm: float
    pf_error: float
    max_violation: float
    cost: float
    u_star: np.ndarray | None = None
    qp_max_dual: float = 0.0
    relaxed: bool = False
    p_min_eig: float = 0.0
    p_asym: float = 0.0


@dataclass
class ScenarioTrace:
    scenario: Scenario = field(repr=False)
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def _stack(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def __getattr__(self, name):
        # u, u_plus, d, d_hat, x, z, ... as stacked arrays
        if name in StepRecord.__dataclass_fields__ and name != "u_star":
            return self._stack(name)
        raise AttributeError(name)

    @property
    def u_star(self) -> np.ndarray:
        n_u = self.scenario.model.n_u
        return np.array([r.u_star if r.u_star is not None else np.full(n_u, np.nan) for r in self.records])

    @property
    def tracking_error(self) -> np.ndarray:
        """``|u_plus_t - u*_t|_2`` (NaN where the oracle was not run)."""
        return np.linalg.norm(self.u_plus - self.u_star, axis=1)

    @property
    def input_error(self) -> np.ndarray:
        """``|u_t - u*_t|_2``."""
        return np.linalg.norm(self.u - self.u_star, axis=1)

    @property
    def vm(self) -> np.ndarray:
        m = self.scenario.model.n_buses - 1
        return self.x[:, :m]

    def to_csv(self, fh=None) -> str | None:
        """Write the trace as CSV; returns the text when ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        writer = TraceWriter(buf, self.scenario)
        for rec in self.records:
            writer.write(rec)
        return buf.getvalue() if fh is None else None


def trace_columns(sc: Scenario) -> list[str]:
    m = sc.model
    u_names = [ch.name for ch in m.inputs]
    d_names = [ch.name for ch in m.disturbances]
    buses = [int(b) for b in m.pq_buses]
    cols = ["t"]
    cols += [f"u_{n}" for n in u_names]
    cols += [f"u_plus_{n}" for n in u_names]
    cols += [f"d_{n}" for n in d_names]
    cols += [f"d_hat_{n}" for n in d_names]
    for prefix in ("x", "z", "z_pr"):
        cols += [f"{prefix}_vm{b}" for b in buses] + [f"{prefix}_va{b}" for b in buses]
    cols += [f"y_{ch.kind}{ch.bus}" for ch in sc.meas.channels]
    cols += ["h_norm", "pf_error", "max_violation", "cost", "qp_max_dual", "relaxed", "p_min_eig", "p_asym"]
    cols += [f"u_star_{n}" for n in u_names]
    cols += ["track_err", "input_err"]
    return cols


def _fmt(v) -> str:
    return repr(float(v))


class TraceWriter:
    """Streams one CSV row per step so partial runs keep their diagnostics."""

    def __init__(self, fh, sc: Scenario):
        self.fh = fh
        self.sc = sc
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(trace_columns(sc))

    def write(self, rec: StepRecord):
        n_u = self.sc.model.n_u
        u_star = rec.u_star if rec.u_star is not None else np.full(n_u, np.nan)
        row = [str(rec.t)]
        for arr in (rec.u, rec.u_plus, rec.d, rec.d_hat, rec.x, rec.z, rec.z_pr, rec.y):
            row += [_fmt(v) for v in arr]
        row += [_fmt(rec.h_norm), _fmt(rec.pf_error), _fmt(rec.max_violation), _fmt(rec.cost),
                _fmt(rec.qp_max_dual), str(int(rec.relaxed)), _fmt(rec.p_min_eig), _fmt(rec.p_asym)]
        row += [_fmt(v) for v in u_star]
        row += [_fmt(np.linalg.norm(rec.u_plus - u_star)), _fmt(np.linalg.norm(rec.u - u_star))]
        self.writer.writerow(row)
        if hasattr(self.fh, "flush"):
            self.fh.flush()


class _OracleCache:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.cache: dict[bytes, np.ndarray] = {}
        self.last = None

    def __call__(self, theta: Theta) -> np.ndarray:
        key = theta.vector().tobytes()
        if key not in self.cache:
            sol = oracle.solve_acopf(self.sc.model, theta, self.sc.cfg, u0=self.last, eta=self.sc.oracle_eta)
            self.cache[key] = sol.u_star
            self.last = sol.u_star
        return self.cache[key]


def _violation(sc: Scenario, x) -> float:
    return max(0.0, float(np.max(ofo.voltage_constraints(sc.model, x, sc.cfg))))


def run_scenario(sc: Scenario, writer: TraceWriter | None = None) -> ScenarioTrace:
    """Run the closed loop for ``sc.horizon`` steps and return the full trace."""
    model, meas, cfg = sc.model, sc.meas, sc.cfg
    rng = np.random.default_rng(sc.seed)
    trace = ScenarioTrace(scenario=sc)
    lo_t, hi_t = sc.lo_profile[0], sc.hi_profile[0]
    u_ref_clipped = np.clip(cfg.u_ref, lo_t, hi_t)
    u = np.clip(sc.u0 if sc.u0 is not None else u_ref_clipped, lo_t, hi_t)
    est = estimation.init_estimator(meas, sc.sigma_omega, sc.mu, sc.p0_scale)
    est.d_hat = np.clip(est.d_hat, model.d_lo, model.d_hi)
    oracle_fn = _OracleCache(sc) if sc.oracle_every > 0 else None
    state = {"t": 0, "u": u}
    try:
        x, _ = powerflow.newton_solve(model, None, u, sc.d_profile[0], tol=PLANT_TOL)
        if sc.z0 == "newton":
            z, _ = powerflow.newton_solve(model, None, u, est.d_hat + est.mu)
        else:
            z = powerflow.flat_start(model)
        if cfg.controller == "pg" and cfg.alpha is None:
            cfg = replace(cfg, alpha=ofo.default_pg_step(model, z, u, est.d_hat, cfg))
        trace.meta.update(controller=cfg.controller, alpha=cfg.alpha, inner_steps=sc.inner_steps)
        u_prev = u
        x_hat = z
        max_dual = 0.0
        for t in range(sc.horizon):
            state = {"t": t, "u": u.tolist(), "d_hat": est.d_hat.tolist(), "z": np.asarray(z).tolist()}
            lo_t, hi_t = sc.lo_profile[t], sc.hi_profile[t]
            d_t = sc.d_profile[t]
            y = estimation.measure(meas, x, rng)
            d_prev = est.d_hat
            d_prior = est.d_hat + est.mu
            if sc.exact_pf_in_loop:
                z_pr, _ = powerflow.newton_solve(model, z, u, d_prior)
            else:
                z_pr = powerflow.online_pf_step(model, z, u, u_prev, d_prior, d_prev, sc.inner_steps,
                                                sc.residual_radius)
            est = estimation.ekf_update(meas, est, u, z_pr, y, pseudo_only=sc.pseudo_only)
            if sc.exact_pf_in_loop:
                z, _ = powerflow.newton_solve(model, z_pr, u, est.d_hat)
            else:
                z = powerflow.online_pf_step(model, z_pr, u, u, est.d_hat, d_prior, sc.inner_steps,
                                             sc.residual_radius)
            theta_hat = Theta(est.d_hat, lo_t, hi_t)
            relaxed = False
            dual = 0.0
            if cfg.controller == "qp":
                u_plus, duals, relaxed = ofo.qp_operator(model, u, z, theta_hat, cfg, return_duals=True)
                dual = duals.max
                max_dual = max(max_dual, dual)
            elif cfg.controller == "pg":
                u_plus = ofo.pg_operator(model, u, z, theta_hat, cfg)
            else:
                u_plus = np.clip(cfg.u_ref, lo_t, hi_t)
            x_hat, _ = powerflow.newton_solve(model, x_hat, u, est.d_hat)
            u_star = None
            if oracle_fn is not None and t % sc.oracle_every == 0:
                d_or = d_t if sc.oracle_target == "true" else est.d_hat
                u_star = oracle_fn(Theta(d_or, lo_t, hi_t))
            rec = StepRecord(
                t=t,
                u=u,
                u_plus=u_plus,
                d=d_t,
                d_hat=est.d_hat,
                x=x,
                z=z,
                z_pr=z_pr,
                y=y,
                h_norm=float(np.linalg.norm(powerflow.residual(model, z, u, est.d_hat))),
                pf_error=float(np.max(np.abs(z - x_hat))),
                max_violation=_violation(sc, x),
                cost=ofo.cost(u, cfg),
                u_star=u_star,
                qp_max_dual=dual,
                relaxed=relaxed,
                p_min_eig=float(np.linalg.eigvalsh(est.P).min()) if est.P.size else 0.0,
                p_asym=float(np.max(np.abs(est.P - est.P.T), initial=0.0)),
            )
            trace.records.append(rec)
            if writer is not None:
                writer.write(rec)
            if t + 1 < sc.horizon:
                u_prev = u
                u = np.clip(u_plus, sc.lo_profile[t + 1], sc.hi_profile[t + 1])
                x, _ = powerflow.newton_solve(model, x, u, sc.d_profile[t + 1], tol=PLANT_TOL)
    except NumericalError as exc:
        raise SimulationError(state["t"], exc, state) from exc
    trace.meta["max_dual"] = max_dual
    trace.meta["zeta_certified"] = bool(cfg.zeta > max_dual)
    if cfg.controller == "qp" and not cfg.zeta > max_dual:
        log.warning("zeta=%g does not exceed the max observed QP dual %g", cfg.zeta, max_dual)
    return trace


# --- metrics ---------------------------------------------------------------

def steps_to_eps(err, eps: float, start: int = 0):
    """First index ``t >= start`` after which ``err`` stays <= eps (NaNs skipped).

    Returned relative to ``start``; None if the band is never held.
    """
    err = np.asarray(err, dtype=float)[start:]
    idx = np.flatnonzero(~np.isnan(err))
    if idx.size == 0:
        return None
    vals = err[idx]
    bad = np.flatnonzero(vals > eps)
    if bad.size == 0:
        return int(idx[0])
    if bad[-1] == vals.size - 1:
        return None
    return int(idx[bad[-1] + 1])


def metrics(trace: ScenarioTrace) -> dict:
    sc = trace.scenario
    err = trace.tracking_error
    valid = err[~np.isnan(err)]
    viol = trace.max_violation
    summary = {
        "scenario": sc.name,
        "controller": trace.meta.get("controller", sc.controller),
        "horizon": len(trace),
        "inner_steps": sc.inner_steps,
        "exact_pf_in_loop": sc.exact_pf_in_loop,
        "alpha": trace.meta.get("alpha"),
        "tracking_error_final": float(valid[-1]) if valid.size else None,
        "tracking_error_mean": float(valid.mean()) if valid.size else None,
        "tracking_error_max": float(valid.max()) if valid.size else None,
        "max_violation": float(viol.max()) if viol.size else 0.0,
        "integrated_violation": float(viol.sum()),
        "estimation_rmse": float(np.sqrt(np.mean(np.sum((trace.d - trace.d_hat) ** 2, axis=1)))),
        "max_h_norm": float(trace.h_norm.max()),
        "max_pf_error": float(trace.pf_error.max()),
        "max_dual": trace.meta.get("max_dual"),
        "zeta_certified": trace.meta.get("zeta_certified"),
    }
    for eps in EPSILONS:
        summary[f"steps_to_{eps:.0e}"] = steps_to_eps(err, eps) if valid.size else None
    return summary


def compare(qp_trace: ScenarioTrace, pg_trace: ScenarioTrace, eps: float = 1e-3) -> dict:
    """Paired QP/PG summary with steps-to-eps ratios."""
    qp_m, pg_m = metrics(qp_trace), metrics(pg_trace)
    out = {"qp": qp_m, "pg": pg_m, "ratios": {}, "reason": None}
    if len(qp_trace) < 2:
        out["reason"] = "insufficient horizon"
        for e in EPSILONS:
            out["ratios"][f"steps_to_{e:.0e}"] = None
        return out
    for e in EPSILONS:
        key = f"steps_to_{e:.0e}"
        a, b = qp_m[key], pg_m[key]
        out["ratios"][key] = (b / max(a, 1)) if a is not None and b is not None else None
    return out
