"""Grid topology, admittance matrix and injection channel maps.

All quantities are per-unit. A bus injection is positive when power flows
*into* the network (generation); loads are negative disturbance values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError

INPUT_KINDS = ("P", "Q", "Vslack")
DISTURBANCE_KINDS = ("P", "Q")


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0

    @property
    def z(self) -> complex:
        return complex(self.r, self.x)


@dataclass(frozen=True)
class Channel:
    """One entry of an input or disturbance map."""

    bus: int
    kind: str
    name: str = ""

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", f"{self.kind}{self.bus}")


def build_admittance(lines: Sequence[Line], n_buses: int) -> np.ndarray:
    """Assemble the dense bus admittance matrix with pi-model line shunts.

    Raises
    ------
    ConfigError
        If a bus index is out of range, an impedance is zero, or the line
        graph does not connect every bus.
    """
    if n_buses < 1:
        raise ConfigError("n_buses must be positive")
    Y = np.zeros((n_buses, n_buses), dtype=complex)
    for ln in lines:
        i, j = ln.from_bus, ln.to_bus
        if not (0 <= i < n_buses and 0 <= j < n_buses) or i == j:
            raise ConfigError(f"line ({i}, {j}): bus index out of range or self-loop")
        if ln.z == 0:
            raise ConfigError(f"line ({i}, {j}): zero impedance")
        y = 1.0 / ln.z
        ysh = 0.5j * ln.b
        Y[i, i] += y + ysh
        Y[j, j] += y + ysh
        Y[i, j] -= y
        Y[j, i] -= y
    if n_buses > 1:
        rows = [ln.from_bus for ln in lines]
        cols = [ln.to_bus for ln in lines]
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_buses, n_buses))
        n_comp, _ = connected_components(graph, directed=False)
        if n_comp != 1:
            raise ConfigError(f"connectivity: network is disconnected ({n_comp} islands)")
    return Y


@dataclass(frozen=True, eq=False)
class GridModel:
    """Immutable single-phase equivalent network with its channel maps.

    ``u_lo``/``u_hi`` are the installed input capacity (the admissible set U),
    ``d_lo``/``d_hi`` the disturbance box D used to clamp estimates.
    """

    n_buses: int
    slack_bus: int
    lines: tuple[Line, ...]
    inputs: tuple[Channel, ...]
    disturbances: tuple[Channel, ...]
    u_lo: np.ndarray
    u_hi: np.ndarray
    d_lo: np.ndarray
    d_hi: np.ndarray
    base_mva: float = 1.0
    base_kv: float = 1.0
    Y: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "disturbances", tuple(self.disturbances))
        for name in ("u_lo", "u_hi", "d_lo", "d_hi"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        Y = build_admittance(self.lines, self.n_buses)
        Y.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        validate_channels(self)

    @property
    def n_u(self) -> int:
        return len(self.inputs)

    @property
    def n_d(self) -> int:
        return len(self.disturbances)

    @property
    def n_x(self) -> int:
        return 2 * (self.n_buses - 1)

    @cached_property
    def pq_buses(self) -> np.ndarray:
        """Non-slack buses in state order."""
        return np.array([i for i in range(self.n_buses) if i != self.slack_bus], dtype=int)

    @cached_property
    def slack_input(self) -> int:
        return next(k for k, ch in enumerate(self.inputs) if ch.kind == "Vslack")

    @cached_property
    def input_map(self) -> np.ndarray:
        """Complex n x n_u matrix with S_spec = input_map @ u + disturbance_map @ d."""
        return _channel_matrix(self.inputs, self.n_buses)

    @cached_property
    def disturbance_map(self) -> np.ndarray:
        return _channel_matrix(self.disturbances, self.n_buses)

    def input_index(self, name: str) -> int:
        return _index_by_name(self.inputs, name, "input")

    def disturbance_index(self, name: str) -> int:
        return _index_by_name(self.disturbances, name, "disturbance")

    def disturbance_channel(self, bus: int, kind: str) -> int | None:
        for k, ch in enumerate(self.disturbances):
            if ch.bus == bus and ch.kind == kind:
                return k
        return None


def _index_by_name(channels, name, what):
    for k, ch in enumerate(channels):
        if ch.name == name:
            return k
    raise ConfigError(f"unknown {what} channel {name!r}")


def _channel_matrix(channels: Iterable[Channel], n_buses: int) -> np.ndarray:
    channels = list(channels)
    M = np.zeros((n_buses, len(channels)), dtype=complex)
    for k, ch in enumerate(channels):
        if ch.kind == "P":
            M[ch.bus, k] = 1.0
        elif ch.kind == "Q":
            M[ch.bus, k] = 1.0j
    M.setflags(write=False)
    return M


def validate_channels(model: GridModel) -> None:
    """Check channel maps and bounds; raise ConfigError naming the invariant."""
    n = model.n_buses
    if not 0 <= model.slack_bus < n:
        raise ConfigError("slack: slack bus index out of range")
    for what, channels, kinds in (
        ("input", model.inputs, INPUT_KINDS),
        ("disturbance", model.disturbances, DISTURBANCE_KINDS),
    ):
        seen = set()
        names = set()
        for ch in channels:
            if ch.kind not in kinds:
                raise ConfigError(f"channel completeness: {what} kind {ch.kind!r} not in {kinds}")
            if not 0 <= ch.bus < n:
                raise ConfigError(f"channel completeness: {what} bus {ch.bus} out of range")
            if ch.kind in ("P", "Q") and ch.bus == model.slack_bus:
                raise ConfigError(
                    f"channel completeness: {what} {ch.kind} channel at the slack bus is never used"
                )
            key = (ch.bus, ch.kind)
            if key in seen:
                raise ConfigError(
                    f"channel completeness: duplicate {what} {ch.kind} channel at bus {ch.bus}"
                )
            if ch.name in names:
                raise ConfigError(f"channel completeness: duplicate {what} name {ch.name!r}")
            seen.add(key)
            names.add(ch.name)
    n_slack = sum(ch.kind == "Vslack" for ch in model.inputs)
    if n_slack != 1:
        raise ConfigError(f"channel completeness: need exactly one Vslack input, got {n_slack}")
    if model.inputs[model.slack_input].bus != model.slack_bus:
        raise ConfigError("channel completeness: Vslack channel must sit on the slack bus")
    for lo, hi, size, what in (
        (model.u_lo, model.u_hi, model.n_u, "input"),
        (model.d_lo, model.d_hi, model.n_d, "disturbance"),
    ):
        if lo.shape != (size,) or hi.shape != (size,):
            raise ConfigError(f"bound ordering: {what} bounds must have length {size}")
        if np.any(lo > hi):
            raise ConfigError(f"bound ordering: {what} lower bound exceeds upper bound")
    if model.u_lo[model.slack_input] <= 0:
        raise ConfigError("bound ordering: slack voltage lower bound must be positive")


def assemble_injections(model: GridModel, u, d) -> np.ndarray:
    """Specified complex injections S at every bus; the slack entry is zero."""
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    if u.shape != (model.n_u,) or d.shape != (model.n_d,):
        raise ValueError(
            f"expected u of length {model.n_u} and d of length {model.n_d}, "
            f"got {u.shape} and {d.shape}"
        )
    S = model.input_map @ u + model.disturbance_map @ d
    S[model.slack_bus] = 0.0
    return S


# --- JSON fixtures ---------------------------------------------------------

def _channels_from_json(items, what) -> list[Channel]:
    out = []
    for it in items:
        try:
            out.append(Channel(bus=int(it["bus"]), kind=str(it["kind"]), name=str(it.get("name", ""))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{what} channel descriptor {it!r} is malformed") from exc
    return out


def _bound_pair(block, size, default_lo, default_hi):
    block = block or {}
    lo = np.asarray(block.get("lower", [default_lo] * size), dtype=float)
    hi = np.asarray(block.get("upper", [default_hi] * size), dtype=float)
    return lo, hi


def model_from_dict(data: dict) -> GridModel:
    """Build a GridModel from the fixture JSON layout.

    Lines may be given in ohms/siemens when ``line_units`` is ``"ohm"``;
    they are converted with the ``base`` block (``mva``, ``kv``).
    """
    try:
        n = int(data["buses"])
        slack = int(data.get("slack", 0))
        raw_lines = data["lines"]
        base = data.get("base", {})
        base_mva = float(base.get("mva", 1.0))
        base_kv = float(base.get("kv", 1.0))
        z_base = base_kv**2 / base_mva
        if data.get("line_units", "pu") not in ("pu", "ohm"):
            raise ConfigError("line_units must be 'pu' or 'ohm'")
        scale = z_base if data.get("line_units", "pu") == "ohm" else 1.0
        lines = [
            Line(
                int(ln["from"]),
                int(ln["to"]),
                float(ln["r"]) / scale,
                float(ln["x"]) / scale,
                float(ln.get("b", 0.0)) * scale,
            )
            for ln in raw_lines
        ]
        inputs = _channels_from_json(data["inputs"], "input")
        disturbances = _channels_from_json(data.get("disturbances", []), "disturbance")
    except KeyError as exc:
        raise ConfigError(f"network fixture is missing key {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"network fixture is malformed: {exc}") from exc
    bounds = data.get("bounds", {})
    u_lo, u_hi = _bound_pair(bounds.get("inputs"), len(inputs), -np.inf, np.inf)
    d_lo, d_hi = _bound_pair(bounds.get("disturbances"), len(disturbances), -np.inf, np.inf)
    return GridModel(
        n_buses=n,
        slack_bus=slack,
        lines=tuple(lines),
        inputs=tuple(inputs),
        disturbances=tuple(disturbances),
        u_lo=u_lo,
        u_hi=u_hi,
        d_lo=d_lo,
        d_hi=d_hi,
        base_mva=base_mva,
        base_kv=base_kv,
    )


def load_network(path: str | Path) -> GridModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"network file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(data)
