"""Measurement model and the extended Kalman filter for the disturbances.

Voltage channels read the state ``x``.  Pseudo channels (``pseudo_P`` /
``pseudo_Q``) are low-accuracy load forecasts: they observe a disturbance
channel directly, so in the filter their rows of ``C`` select ``d`` instead
of going through the power-flow sensitivity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import powerflow
from .errors import ConfigError, EstimationError
from .network import GridModel

log = logging.getLogger(__name__)

MEAS_KINDS = ("vm", "va", "pseudo_P", "pseudo_Q")
NOISE_TRUNCATION = 6.0


@dataclass(frozen=True)
class MeasChannel:
    kind: str
    bus: int
    sigma: float


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """Measurement placement plus the pseudo-measurement forecast.

    ``forecast`` holds one value per disturbance channel; it is what the
    pseudo channels report (plus noise), independent of the true load.
    """

    model: GridModel
    channels: tuple[MeasChannel, ...]
    forecast: np.ndarray
    rows: np.ndarray = field(init=False, repr=False)
    dcol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        fc = np.array(self.forecast, dtype=float).reshape(-1)
        if fc.shape != (self.model.n_d,):
            raise ConfigError(f"forecast must have {self.model.n_d} entries")
        fc.setflags(write=False)
        object.__setattr__(self, "forecast", fc)
        m = self.model.n_buses - 1
        pos = {bus: k for k, bus in enumerate(self.model.pq_buses)}
        rows = np.full(len(self.channels), -1, dtype=int)
        dcol = np.full(len(self.channels), -1, dtype=int)
        for i, ch in enumerate(self.channels):
            if ch.kind not in MEAS_KINDS:
                raise ConfigError(f"measurement kind {ch.kind!r} not in {MEAS_KINDS}")
            if not ch.sigma > 0:
                raise ConfigError(f"measurement {ch.kind}@{ch.bus}: sigma must be > 0")
            if ch.kind in ("vm", "va"):
                if ch.bus == self.model.slack_bus:
                    raise ConfigError(
                        f"measurement {ch.kind}@{ch.bus}: slack voltage is not part of the state"
                    )
                if ch.bus not in pos:
                    raise ConfigError(f"measurement bus {ch.bus} out of range")
                rows[i] = pos[ch.bus] + (m if ch.kind == "va" else 0)
            else:
                k = self.model.disturbance_channel(ch.bus, ch.kind[-1])
                if k is None:
                    raise ConfigError(
                        f"pseudo measurement {ch.kind}@{ch.bus} has no matching disturbance channel"
                    )
                dcol[i] = k
        rows.setflags(write=False)
        dcol.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "dcol", dcol)

    @property
    def n_y(self) -> int:
        return len(self.channels)

    @property
    def sigma(self) -> np.ndarray:
        return np.array([ch.sigma for ch in self.channels])

    @property
    def noise_cov(self) -> np.ndarray:
        return np.diag(self.sigma**2)

    @property
    def pseudo_mask(self) -> np.ndarray:
        return self.dcol >= 0


@dataclass
class EstimatorState:
    d_hat: np.ndarray
    P: np.ndarray
    mu: np.ndarray
    sigma_omega: np.ndarray
    clamped: bool = False


def init_estimator(meas: MeasurementModel, sigma_omega, mu=None, p0_scale: float = 10.0) -> EstimatorState:
    """Start from the forecast with ``P0 = p0_scale * Sigma_omega``."""
    n_d = meas.model.n_d
    Sw = np.asarray(sigma_omega, dtype=float)
    if Sw.ndim <= 1:
        Sw = np.diag(np.broadcast_to(Sw, (n_d,)))
    mu = np.zeros(n_d) if mu is None else np.broadcast_to(np.asarray(mu, dtype=float), (n_d,)).copy()
    return EstimatorState(d_hat=meas.forecast.copy(), P=p0_scale * Sw, mu=mu, sigma_omega=Sw)


def predict_measurements(meas: MeasurementModel, x, d) -> np.ndarray:
    """Noise-free measurement function: voltages from ``x``, pseudo channels from ``d``."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    out = np.empty(meas.n_y)
    volt = ~meas.pseudo_mask
    out[volt] = x[meas.rows[volt]]
    out[~volt] = d[meas.dcol[~volt]]
    return out


def measure(meas: MeasurementModel, x_true, rng=None) -> np.ndarray:
    """Noisy measurements of the true state; pseudo channels report the forecast.

    Noise is Gaussian truncated (clipped) at six standard deviations.
    ``rng`` may be a seed or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(rng)
    clean = predict_measurements(meas, x_true, meas.forecast)
    noise = np.clip(rng.standard_normal(meas.n_y), -NOISE_TRUNCATION, NOISE_TRUNCATION)
    return clean + meas.sigma * noise


def measurement_jacobian(meas: MeasurementModel, x=None) -> np.ndarray:
    """Gradient of the voltage part of the measurement function w.r.t. ``x``.

    Rows of pseudo channels are zero: they depend on the forecast, not on ``x``.
    """
    J = np.zeros((meas.n_y, meas.model.n_x))
    for i, r in enumerate(meas.rows):
        if r >= 0:
            J[i, r] = 1.0
    return J


def observation_matrix(meas: MeasurementModel, z, u, d) -> np.ndarray:
    """``C = grad_x c(z) (-Hx^-1 Hd)`` with direct selection rows for pseudo channels."""
    _, Sx_d = powerflow.sensitivities(meas.model, z, u, d)
    C = measurement_jacobian(meas, z) @ Sx_d
    for i, k in enumerate(meas.dcol):
        if k >= 0:
            C[i, k] = 1.0
    return C


def kalman_gain(C, prior_cov, noise_cov) -> np.ndarray:
    """Information-form gain ``(C' R^-1 C + Pp^-1)^-1 C' R^-1``."""
    try:
        Pp_inv = cho_solve(cho_factor(prior_cov), np.eye(prior_cov.shape[0]))
    except LinAlgError as exc:
        raise EstimationError("degenerate prior: P + Sigma_omega is not positive definite") from exc
    r = np.diag(noise_cov) if noise_cov.ndim == 2 else np.asarray(noise_cov)
    CtRi = C.T / r
    return np.linalg.solve(CtRi @ C + Pp_inv, CtRi)


def ekf_update(meas: MeasurementModel, est: EstimatorState, u, z_prior, y,
               pseudo_only: bool = False) -> EstimatorState:
    """One filter update around the online power-flow prior ``z_prior``.

    The prior mean is ``d_hat + mu``; the result is clamped to the model's
    disturbance box. ``pseudo_only=True`` ignores every voltage channel (a
    forecast-only baseline).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (meas.n_y,) or not np.all(np.isfinite(y)):
        raise EstimationError("measurement vector is non-finite or has the wrong length")
    model = meas.model
    d_prior = est.d_hat + est.mu
    prior_cov = est.P + est.sigma_omega
    C = observation_matrix(meas, z_prior, u, d_prior)
    R = meas.sigma**2
    innov = y - predict_measurements(meas, z_prior, d_prior)
    if pseudo_only:
        keep = meas.pseudo_mask
        K = np.zeros((model.n_d, meas.n_y))
        K[:, keep] = kalman_gain(C[keep], prior_cov, R[keep])
    else:
        K = kalman_gain(C, prior_cov, R)
    d_new = d_prior + K @ innov
    P_new = (np.eye(model.n_d) - K @ C) @ prior_cov
    P_new = 0.5 * (P_new + P_new.T)
    clipped = np.clip(d_new, model.d_lo, model.d_hi)
    clamped = bool(np.any(clipped != d_new))
    if clamped:
        log.warning("disturbance estimate clamped to box D")
    return replace(est, d_hat=clipped, P=P_new, clamped=clamped)
