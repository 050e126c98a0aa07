import numpy as np
import pytest

from gridofo import estimation, powerflow
from gridofo.errors import ConfigError, EstimationError
from gridofo.estimation import MeasChannel, MeasurementModel

from conftest import random_feasible_point


def full_meas(model, sigma=1e-3, pseudo_sigma=0.1, forecast=None):
    chans = [MeasChannel(k, int(b), sigma) for k in ("vm", "va") for b in model.pq_buses]
    chans += [MeasChannel(f"pseudo_{ch.kind}", ch.bus, pseudo_sigma) for ch in model.disturbances]
    fc = np.zeros(model.n_d) if forecast is None else forecast
    return MeasurementModel(model, chans, fc)


def test_gain_matches_covariance_form():
    rng = np.random.default_rng(0)
    C = rng.standard_normal((5, 3))
    M = rng.standard_normal((3, 3))
    Pp = M @ M.T + np.eye(3)
    R = np.diag(rng.uniform(0.1, 1.0, 5))
    K_cov = Pp @ C.T @ np.linalg.inv(C @ Pp @ C.T + R)
    np.testing.assert_allclose(estimation.kalman_gain(C, Pp, R), K_cov, atol=1e-12)


def test_degenerate_prior_raises():
    with pytest.raises(EstimationError, match="degenerate"):
        estimation.kalman_gain(np.eye(2), np.zeros((2, 2)), np.eye(2))


def test_observation_matrix_matches_finite_differences(feeder15):
    m = feeder15.model
    meas = full_meas(m)
    x, u, d = random_feasible_point(m, np.random.default_rng(1))
    C = estimation.observation_matrix(meas, x, u, d)

    def y_of(dv):
        xv, _ = powerflow.newton_solve(m, x, u, dv, tol=1e-13)
        return estimation.predict_measurements(meas, xv, dv)

    eps = 1e-6
    fd = np.column_stack([(y_of(d + eps * e) - y_of(d - eps * e)) / (2 * eps) for e in np.eye(m.n_d)])
    np.testing.assert_allclose(C, fd, atol=1e-6)


def test_measure_noise_statistics(two_bus):
    m = two_bus.model
    meas = MeasurementModel(m, [MeasChannel("vm", 1, 0.01)], np.zeros(m.n_d))
    x, _ = powerflow.newton_solve(m, None, [0.2, 0, 1], [-0.1, 0])
    y = np.array([estimation.measure(meas, x, rng)[0] for rng in np.random.default_rng(0).spawn(4000)])
    assert np.mean(y) == pytest.approx(x[0], abs=1e-3)
    assert np.std(y) == pytest.approx(0.01, rel=0.05)


def test_measure_is_deterministic_for_a_seed(feeder15):
    meas = full_meas(feeder15.model)
    x = powerflow.flat_start(feeder15.model)
    np.testing.assert_array_equal(estimation.measure(meas, x, 7), estimation.measure(meas, x, 7))


def test_pseudo_channels_report_forecast(two_bus):
    m = two_bus.model
    meas = MeasurementModel(m, [MeasChannel("pseudo_P", 1, 1e-9)], np.array([-0.3, -0.1]))
    y = estimation.measure(meas, powerflow.flat_start(m), 0)
    assert y[0] == pytest.approx(-0.3, abs=1e-7)


@pytest.mark.parametrize(
    "chan, msg",
    [
        (MeasChannel("vm", 0, 0.01), "slack"),
        (MeasChannel("vm", 1, 0.0), "sigma"),
        (MeasChannel("ia", 1, 0.01), "kind"),
        (MeasChannel("pseudo_P", 0, 0.01), "no matching"),
    ],
)
def test_bad_channels_rejected(two_bus, chan, msg):
    with pytest.raises(ConfigError, match=msg):
        MeasurementModel(two_bus.model, [chan], np.zeros(2))


def test_ekf_converges_to_true_disturbance(feeder15):
    m = feeder15.model
    rng = np.random.default_rng(3)
    d_true = np.array([-0.12, -0.08, -0.1, -0.15, -0.03, -0.02, -0.04, -0.05])
    u = np.clip(feeder15.cfg.u_ref * 0.5, m.u_lo, m.u_hi)
    u[-1] = 1.0
    x_true, _ = powerflow.newton_solve(m, None, u, d_true)
    meas = full_meas(m, sigma=1e-4, forecast=np.full(m.n_d, -0.1))
    est = estimation.init_estimator(meas, 1e-6, p0_scale=1e4)
    for _ in range(50):
        z, _ = powerflow.newton_solve(m, x_true, u, est.d_hat)
        est = estimation.ekf_update(meas, est, u, z, estimation.measure(meas, x_true, rng))
        assert np.linalg.eigvalsh(est.P).min() >= -1e-12
        np.testing.assert_array_equal(est.P, est.P.T)
    assert np.max(np.abs(est.d_hat - d_true)) < 5e-3


def test_pseudo_only_stays_near_forecast(feeder15):
    m = feeder15.model
    meas = full_meas(m, forecast=np.full(m.n_d, -0.1))
    est = estimation.init_estimator(meas, 1e-6)
    x, _ = powerflow.newton_solve(m, None, np.clip(feeder15.cfg.u_ref, m.u_lo, m.u_hi), np.full(m.n_d, -0.2))
    y = estimation.measure(meas, x, 0)
    est2 = estimation.ekf_update(meas, est, np.clip(feeder15.cfg.u_ref, m.u_lo, m.u_hi), x, y, pseudo_only=True)
    assert np.max(np.abs(est2.d_hat + 0.1)) < 0.01


def test_clamp_to_disturbance_box(two_bus):
    m = two_bus.model
    meas = MeasurementModel(m, [MeasChannel("pseudo_P", 1, 1e-3)], np.array([0.0, 0.0]))
    est = estimation.init_estimator(meas, 1.0)
    z = powerflow.flat_start(m)
    est2 = estimation.ekf_update(meas, est, [0, 0, 1], z, np.array([5.0]))
    assert est2.clamped
    assert est2.d_hat[0] == m.d_hi[0]


def test_bad_measurement_vector(two_bus):
    m = two_bus.model
    meas = MeasurementModel(m, [MeasChannel("vm", 1, 1e-3)], np.zeros(2))
    est = estimation.init_estimator(meas, 1e-4)
    with pytest.raises(EstimationError):
        estimation.ekf_update(meas, est, [0, 0, 1], powerflow.flat_start(m), np.array([np.nan]))
