"""Scenario files: JSON parsing, overrides and invariant checks.

A scenario JSON object has the keys::

    name, network (inline object or path), horizon, dt, seed, inner_steps,
    oracle_every, oracle_target ("true" | "estimate"), exact_pf_in_loop,
    controller {controller, eta, zeta, alpha, soft_mode, u_ref, vmin, vmax},
    measurements [{kind, bus, sigma}],
    estimator {sigma_omega, mu, p0_scale, pseudo_forecast, pseudo_only},
    disturbances (CSV path | {"csv": path} | {channel: spec}),
    limits {lower: ..., upper: ...}   (same forms, per input channel),
    u0 (list or {channel: value}), z0 ("newton" | "flat")

``u_ref`` may be a list or a ``{channel: value}`` mapping; unspecified
entries default to the installed upper bound for P channels, 0 for Q and
1.0 for the slack magnitude.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .estimation import MeasChannel, MeasurementModel
from .network import GridModel, model_from_dict
from .ofo import OfoConfig
from .profiles import load_profiles

CONTROLLERS = ("qp", "pg", "open_loop")


@dataclass
class Scenario:
    name: str
    model: GridModel
    meas: MeasurementModel
    cfg: OfoConfig
    horizon: int
    d_profile: np.ndarray
    lo_profile: np.ndarray
    hi_profile: np.ndarray
    sigma_omega: np.ndarray
    mu: np.ndarray
    seed: int = 0
    dt: float = 1.0
    inner_steps: int = 1
    oracle_every: int = 1
    oracle_target: str = "true"
    oracle_eta: float = 1.0
    exact_pf_in_loop: bool = False
    p0_scale: float = 10.0
    pseudo_only: bool = False
    u0: np.ndarray | None = None
    z0: str = "newton"
    residual_radius: float | None = 1.0
    source: dict = field(default_factory=dict, repr=False)

    @property
    def controller(self) -> str:
        return self.cfg.controller

    def with_overrides(self, **kw) -> "Scenario":
        """Copy with CLI-style overrides (seed, inner_steps, controller, horizon, ...)."""
        kw = {k: v for k, v in kw.items() if v is not None}
        controller = kw.pop("controller", None)
        sc = replace(self, **kw)
        if controller is not None:
            if controller not in CONTROLLERS:
                raise ConfigError(f"controller must be one of {CONTROLLERS}")
            sc.cfg = replace(sc.cfg, controller=controller)
        validate_scenario(sc)
        return sc


def validate_scenario(sc: Scenario) -> None:
    """Raise ConfigError naming the first violated invariant."""
    m = sc.model
    if sc.horizon < 1:
        raise ConfigError("horizon: must be >= 1")
    if sc.inner_steps < 1:
        raise ConfigError("inner steps: N must be >= 1")
    if sc.oracle_every < 0:
        raise ConfigError("oracle_every: must be >= 0")
    if sc.oracle_target not in ("true", "estimate"):
        raise ConfigError("oracle_target must be 'true' or 'estimate'")
    for arr, width, what in (
        (sc.d_profile, m.n_d, "disturbance"),
        (sc.lo_profile, m.n_u, "lower limit"),
        (sc.hi_profile, m.n_u, "upper limit"),
    ):
        if arr.ndim != 2 or arr.shape[1] != width:
            raise ConfigError(f"profile length: {what} profile must have {width} columns")
        if arr.shape[0] < sc.horizon:
            raise ConfigError(
                f"profile length: {what} profile has {arr.shape[0]} steps, horizon is {sc.horizon}"
            )
    if not np.all(np.isfinite(sc.d_profile)):
        raise ConfigError("profile values: disturbance profile must be finite")
    if np.any(sc.lo_profile[: sc.horizon] > sc.hi_profile[: sc.horizon]):
        raise ConfigError("bound ordering: lower limit exceeds upper limit at some step")
    if np.any(sc.lo_profile[: sc.horizon] < m.u_lo) or np.any(sc.hi_profile[: sc.horizon] > m.u_hi):
        raise ConfigError("bound ordering: limit profiles leave the installed input box")
    if sc.cfg.u_ref.shape != (m.n_u,):
        raise ConfigError(f"controller: u_ref must have {m.n_u} entries")
    if sc.cfg.controller not in CONTROLLERS:
        raise ConfigError(f"controller must be one of {CONTROLLERS}")
    if sc.u0 is not None and np.shape(sc.u0) != (m.n_u,):
        raise ConfigError(f"u0 must have {m.n_u} entries")
    if sc.z0 not in ("newton", "flat"):
        raise ConfigError("z0 must be 'newton' or 'flat'")


def _resolve(path, base_dir: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base_dir / p


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _channel_vector(value, channels, default, what) -> np.ndarray:
    out = np.array(default, dtype=float)
    if value is None:
        return out
    if isinstance(value, dict):
        names = [ch.name for ch in channels]
        for key, v in value.items():
            if key not in names:
                raise ConfigError(f"{what}: unknown channel {key!r}")
            out[names.index(key)] = float(v)
        return out
    arr = np.asarray(value, dtype=float)
    if arr.shape != out.shape:
        raise ConfigError(f"{what}: expected {out.size} entries, got {arr.size}")
    return arr


def default_u_ref(model: GridModel) -> np.ndarray:
    ref = np.zeros(model.n_u)
    for k, ch in enumerate(model.inputs):
        if ch.kind == "P":
            ref[k] = model.u_hi[k] if np.isfinite(model.u_hi[k]) else 0.0
        elif ch.kind == "Vslack":
            ref[k] = 1.0
    return ref


def scenario_from_dict(data: dict, base_dir=".") -> Scenario:
    base_dir = Path(base_dir)
    net = data.get("network")
    if net is None:
        raise ConfigError("scenario is missing 'network'")
    if isinstance(net, str):
        net_path = _resolve(net, base_dir)
        net = _read_json(net_path)
        if "network" in net:
            net = net["network"]
    model = model_from_dict(net)
    try:
        horizon = int(data.get("horizon", 100))
        seed = int(data.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"horizon/seed must be integers: {exc}") from exc
    if horizon < 1:
        raise ConfigError("horizon: must be >= 1")

    ctrl = dict(data.get("controller", {}))
    u_ref = _channel_vector(ctrl.get("u_ref"), model.inputs, default_u_ref(model), "u_ref")
    try:
        cfg = OfoConfig(
            u_ref=u_ref,
            eta=float(ctrl.get("eta", 5.0)),
            vmin=float(ctrl.get("vmin", 0.94)),
            vmax=float(ctrl.get("vmax", 1.06)),
            zeta=float(ctrl.get("zeta", 1e3)),
            alpha=None if ctrl.get("alpha") is None else float(ctrl["alpha"]),
            soft_mode=bool(ctrl.get("soft_mode", True)),
            controller=str(ctrl.get("controller", "qp")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"controller block is malformed: {exc}") from exc

    d_names = [ch.name for ch in model.disturbances]
    u_names = [ch.name for ch in model.inputs]
    d_profile = load_profiles(data.get("disturbances"), d_names, horizon, base_dir, seed)
    limits = data.get("limits", {}) or {}
    lo_profile = load_profiles(limits.get("lower"), u_names, horizon, base_dir, seed + 1,
                               defaults=model.u_lo)
    hi_profile = load_profiles(limits.get("upper"), u_names, horizon, base_dir, seed + 2,
                               defaults=model.u_hi)

    est = dict(data.get("estimator", {}))
    sigma_omega = np.broadcast_to(
        np.asarray(est.get("sigma_omega", 1e-6), dtype=float), (model.n_d,)
    ).copy()
    mu = np.broadcast_to(np.asarray(est.get("mu", 0.0), dtype=float), (model.n_d,)).copy()
    forecast = est.get("pseudo_forecast", "mean")
    if forecast == "mean":
        forecast = d_profile[:horizon].mean(axis=0)
    else:
        forecast = _channel_vector(forecast, model.disturbances, np.zeros(model.n_d), "pseudo_forecast")

    try:
        channels = [
            MeasChannel(kind=str(c["kind"]), bus=int(c["bus"]), sigma=float(c["sigma"]))
            for c in data.get("measurements", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"measurement descriptor malformed: {exc}") from exc
    meas = MeasurementModel(model, channels, forecast)

    u0 = data.get("u0")
    if u0 is not None:
        u0 = _channel_vector(u0, model.inputs, np.clip(u_ref, model.u_lo, model.u_hi), "u0")

    sc = Scenario(
        name=str(data.get("name", "scenario")),
        model=model,
        meas=meas,
        cfg=cfg,
        horizon=horizon,
        d_profile=d_profile,
        lo_profile=lo_profile,
        hi_profile=hi_profile,
        sigma_omega=sigma_omega,
        mu=mu,
        seed=seed,
        dt=float(data.get("dt", 1.0)),
        inner_steps=int(data.get("inner_steps", 1)),
        oracle_every=int(data.get("oracle_every", 1)),
        oracle_target=str(data.get("oracle_target", "true")),
        oracle_eta=float(data.get("oracle_eta", 1.0)),
        exact_pf_in_loop=bool(data.get("exact_pf_in_loop", False)),
        p0_scale=float(est.get("p0_scale", 10.0)),
        pseudo_only=bool(est.get("pseudo_only", False)),
        u0=u0,
        z0=str(data.get("z0", "newton")),
        residual_radius=data.get("residual_radius", 1.0),
        source=data,
    )
    validate_scenario(sc)
    return sc


def load_scenario(path, **overrides) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    data = _read_json(path)
    sc = scenario_from_dict(data, base_dir=path.parent)
    return sc.with_overrides(**overrides) if overrides else sc
