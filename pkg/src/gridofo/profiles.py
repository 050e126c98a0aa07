"""Disturbance and limit time series: CSV ingestion and synthetic generators."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ConfigError

SYNTHETIC_KINDS = ("constant", "ramp", "sinusoid", "random_walk", "step")


def synthetic(spec, horizon: int, rng=None) -> np.ndarray:
    """One channel of a synthetic profile.

    ``spec`` is a number (constant) or a dict with ``kind`` one of
    ``constant`` (value), ``ramp`` (start, end, optional t0/t1),
    ``sinusoid`` (mean, amplitude, period, phase), ``random_walk``
    (start, variance, drift) or ``step`` (before, after, at).
    """
    if isinstance(spec, (int, float)):
        spec = {"kind": "constant", "value": spec}
    if not isinstance(spec, dict):
        raise ConfigError(f"profile spec must be a number or an object, got {spec!r}")
    kind = spec.get("kind")
    t = np.arange(horizon, dtype=float)
    try:
        if kind == "constant":
            out = np.full(horizon, float(spec["value"]))
        elif kind == "ramp":
            t0 = int(spec.get("t0", 0))
            t1 = int(spec.get("t1", horizon - 1))
            if t1 <= t0:
                raise ConfigError("ramp needs t1 > t0")
            a, b = float(spec["start"]), float(spec["end"])
            frac = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)
            out = a + frac * (b - a)
            out[t >= t1] = b
        elif kind == "sinusoid":
            out = float(spec["mean"]) + float(spec["amplitude"]) * np.sin(
                2 * np.pi * t / float(spec["period"]) + float(spec.get("phase", 0.0))
            )
        elif kind == "random_walk":
            rng = np.random.default_rng(rng)
            steps = float(spec.get("drift", 0.0)) + np.sqrt(float(spec["variance"])) * rng.standard_normal(horizon - 1)
            out = float(spec["start"]) + np.concatenate([[0.0], np.cumsum(steps)])
            if "lower" in spec or "upper" in spec:
                out = np.clip(out, spec.get("lower", -np.inf), spec.get("upper", np.inf))
        elif kind == "step":
            out = np.where(t < int(spec["at"]), float(spec["before"]), float(spec["after"]))
        else:
            raise ConfigError(f"unknown profile kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    except KeyError as exc:
        raise ConfigError(f"{kind} profile is missing {exc.args[0]!r}") from exc
    return out


def read_csv(path: str | Path, names=None) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            rows = [[float(v) for v in row] for row in reader if row]
    except FileNotFoundError as exc:
        raise ConfigError(f"profile file not found: {path}") from exc
    except (StopIteration, ValueError) as exc:
        raise ConfigError(f"{path}: malformed profile CSV ({exc})") from exc
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if not np.all(np.isfinite(data)):
        raise ConfigError(f"{path}: non-finite profile values")
    if names is not None:
        missing = [n for n in names if n not in header]
        if missing:
            raise ConfigError(f"{path}: profile columns missing for channels {missing}")
        data = data[:, [header.index(n) for n in names]]
        header = list(names)
    return header, data


def load_profiles(source, names, horizon: int, base_dir=None, seed: int = 0,
                  defaults=None) -> np.ndarray:
    """Per-channel series as a ``(horizon, len(names))`` array.

    ``source`` may be a CSV path, ``{"csv": path}``, or a mapping from
    channel name to a synthetic spec. Channels absent from a mapping fall
    back to ``defaults[k]`` (constant) when given.
    """
    names = list(names)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    if isinstance(source, (str, Path)):
        source = {"csv": source}
    if source is None:
        source = {}
    if not isinstance(source, dict):
        raise ConfigError("profiles must be a CSV path or a channel->spec mapping")
    if "csv" in source:
        path = Path(source["csv"])
        if not path.is_absolute():
            path = base_dir / path
        _, data = read_csv(path, names)
        if data.shape[0] < horizon:
            raise ConfigError(
                f"profile length: {path} has {data.shape[0]} rows, horizon is {horizon}"
            )
        return data[:horizon].copy()
    unknown = set(source) - set(names)
    if unknown:
        raise ConfigError(f"profiles given for unknown channels {sorted(unknown)}")
    out = np.empty((horizon, len(names)))
    for k, name in enumerate(names):
        if name in source:
            out[:, k] = synthetic(source[name], horizon, rng=[seed, k])
        elif defaults is not None:
            out[:, k] = defaults[k]
        else:
            raise ConfigError(f"profile length: no profile for channel {name!r}")
    if np.any(np.isnan(out)):
        raise ConfigError("NaN in profile values")
    return out
