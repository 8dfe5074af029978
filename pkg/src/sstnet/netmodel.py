"""Radial feeder topology, per-SST parameters and setpoints, grid coupling."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

# Tie-line impedances (ohm) of the 9-bus reduction of the IEEE 34-bus feeder,
# Z01 .. Z89 in feeder order.
IEEE34_LINES: tuple[tuple[float, float], ...] = (
    (0.653, 0.651),
    (0.438, 0.437),
    (8.16, 8.14),
    (9.49, 9.47),
    (7.53, 7.51),
    (0.0037, 0.0027),
    (0.906, 0.481),
    (25.52, 13.546),
    (7.284, 13.865),
)

COUPLING_MODES = ("as-written", "prefix-sum")


class ParameterError(ValueError):
    """A parameter or setpoint violates its physical invariant.

    ``key`` names the offending field so callers can report it.
    """

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _require(cond, key: str, message: str) -> None:
    if not bool(np.all(cond)):
        raise ParameterError(key, message)


@dataclass(frozen=True)
class FeederTopology:
    """Radial feeder: SST ``i`` hangs off SST ``i-1`` through ``lines[i]``.

    ``omega`` may be a scalar (common line frequency) or one value per SST.
    ``coupling`` selects how the node voltages are formed from the SST
    currents: ``"as-written"`` sums every SST current at every node,
    ``"prefix-sum"`` uses the physical radial line currents.
    """

    lines: tuple[tuple[float, float], ...]
    v_g_d: float
    v_g_q: float = 0.0
    omega: float | tuple[float, ...] = 2 * np.pi * 60
    theta0: tuple[float, ...] | None = None
    coupling: str = "as-written"

    def __post_init__(self):
        lines = tuple((float(r), float(x)) for r, x in self.lines)
        object.__setattr__(self, "lines", lines)
        _require(len(lines) >= 1, "lines", "at least one SST is required")
        _require([r >= 0 for r, _ in lines], "lines", "line resistances must be >= 0")
        _require(np.asarray(self.omega) > 0, "omega", "must be > 0")
        if np.ndim(self.omega) == 1:
            _require(len(self.omega) == self.n, "omega", f"expected {self.n} values")
            object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if self.theta0 is None:
            object.__setattr__(self, "theta0", (0.0,) * self.n)
        else:
            _require(len(self.theta0) == self.n, "theta0", f"expected {self.n} values")
            object.__setattr__(self, "theta0", tuple(float(t) for t in self.theta0))
        _require(self.coupling in COUPLING_MODES, "coupling",
                 f"must be one of {COUPLING_MODES}")

    @property
    def n(self) -> int:
        return len(self.lines)

    @property
    def r(self) -> np.ndarray:
        return np.array([r for r, _ in self.lines])

    @property
    def x(self) -> np.ndarray:
        return np.array([x for _, x in self.lines])

    @property
    def omegas(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.omega, dtype=float), (self.n,)).copy()

    def path_impedance(self, m: int) -> tuple[float, float]:
        """Series (R, X) from the substation to SST ``m`` (0-based)."""
        return float(self.r[: m + 1].sum()), float(self.x[: m + 1].sum())


def coupling_voltages(topology: FeederTopology, i_d, i_q) -> tuple[np.ndarray, np.ndarray]:
    """dq voltages at every SST node for the given SST currents."""
    i_d = np.asarray(i_d, dtype=float)
    i_q = np.asarray(i_q, dtype=float)
    if i_d.shape != (topology.n,) or i_q.shape != (topology.n,):
        raise ValueError(
            f"expected current vectors of length {topology.n}, "
            f"got {i_d.shape} and {i_q.shape}")
    r, x = topology.r, topology.x
    if topology.coupling == "as-written":
        sd, sq = i_d.sum(), i_q.sum()
        v_d = topology.v_g_d + r * sd - x * sq
        v_q = topology.v_g_q + r * sd + x * sq
    else:
        # line k carries every SST current downstream of it
        line_d = np.cumsum(i_d[::-1])[::-1]
        line_q = np.cumsum(i_q[::-1])[::-1]
        v_d = topology.v_g_d + np.cumsum(r * line_d - x * line_q)
        v_q = topology.v_g_q + np.cumsum(x * line_d + r * line_q)
    return v_d, v_q


def theta(topology: FeederTopology, i: int, t: float) -> float:
    """Grid phase angle of SST ``i`` at time ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return float(topology.omegas[i] * t + topology.theta0[i])


class _Stackable:
    """Mixin: per-SST records whose fields can be stacked into arrays."""

    @classmethod
    def stack(cls, items: Sequence):
        """One instance whose fields are arrays over ``items``."""
        values = {f.name: np.array([getattr(it, f.name) for it in items], dtype=float)
                  for f in fields(cls)}
        obj = object.__new__(cls)
        for k, v in values.items():
            object.__setattr__(obj, k, v)
        return obj

    def to_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SstParams(_Stackable):
    """Rectifier and DAB constants plus the internal PI gains of one SST."""

    L_f: float = 10e-3
    r_f: float = 0.5
    C_f: float = 5e-3
    k1: float = -4.0
    k2: float = -200.0
    k3: float = 10.0 / 3
    k4: float = 1.0 / 300
    k5: float = 1.0 / 300
    k6: float = 10.0 / 3
    C_h: float = 2e-3
    r_h: float = 1.0
    C_l: float = 5e-3
    L_s: float = 18.75e-3
    n_s: float = 30.0
    f_s: float = 20e3
    k7: float = 5e-3
    k8: float = 1.0

    def __post_init__(self):
        for key in ("L_f", "r_f", "C_f", "C_h", "r_h", "C_l", "L_s", "n_s", "f_s"):
            _require(np.asarray(getattr(self, key)) > 0, key, "must be > 0")


@dataclass(frozen=True)
class DesdParams(_Stackable):
    """Storage converter constants, battery voltage band and current limit."""

    C_o: float = 1e-3
    r_o: float = 0.1
    C_in: float = 2e-3
    r_in: float = 0.05
    L_b: float = 20e-6
    n_b: float = 1.0
    f_b: float = 20e3
    v_b_min: float = 300.0
    v_b_max: float = 360.0
    I_b_max: float = 50.0
    kappa_p: float = 0.1

    def __post_init__(self):
        for key in ("C_o", "r_o", "C_in", "r_in", "L_b", "n_b", "f_b",
                    "v_b_min", "I_b_max", "kappa_p"):
            _require(np.asarray(getattr(self, key)) > 0, key, "must be > 0")
        _require(np.asarray(self.v_b_min) <= np.asarray(self.v_b_max), "v_b_max",
                 "must be >= v_b_min")

    @property
    def u_b_min(self):
        return -self.n_b / (self.f_b * self.L_b)

    @property
    def u_b_max(self):
        return self.n_b / (8 * self.f_b * self.L_b)

    @property
    def tracking_rate(self):
        """Exponential decay rate of the closed-loop tracking error (1/s)."""
        return self.kappa_p / (self.r_o * self.C_o)


@dataclass(frozen=True)
class Setpoints(_Stackable):
    """Operating references of one SST (power in W, voltages in V, currents in A)."""

    p_rec: float
    v_f: float
    v_h: float
    v_l: float
    i_q: float = 0.0
    i_d: float = 0.0
    v_d: float = 0.0
    v_q: float = 0.0
    i_dab: float = 0.0
    p_rec_max: float = np.inf

    def __post_init__(self):
        _require(np.asarray(self.v_l) > 0, "v_l", "low-voltage setpoint must be > 0")


@dataclass(frozen=True)
class SetpointSet:
    """Setpoints for every SST of the feeder, indexed 0..n-1."""

    ssts: tuple[Setpoints, ...]

    def __post_init__(self):
        object.__setattr__(self, "ssts", tuple(self.ssts))

    def __len__(self):
        return len(self.ssts)

    def __getitem__(self, i) -> Setpoints:
        return self.ssts[i]

    def __iter__(self):
        return iter(self.ssts)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.ssts], dtype=float)

    def stacked(self) -> Setpoints:
        return Setpoints.stack(self.ssts)

    def replace(self, i: int, **changes) -> "SetpointSet":
        items = list(self.ssts)
        items[i] = dataclasses.replace(items[i], **changes)
        return SetpointSet(tuple(items))


def idab_from_power(p_rec, v_f, v_h, v_l, r_h):
    """DC-grid current that delivers ``p_rec`` after the high-side resistive loss."""
    if np.any(np.asarray(v_l) <= 0):
        raise ParameterError("v_l", "low-voltage setpoint must be > 0")
    if np.any(np.asarray(r_h) <= 0):
        raise ParameterError("r_h", "must be > 0")
    return (p_rec - (v_f - v_h) ** 2 / r_h) / v_l


def _current_for_power(p_rec, v_d, v_q, i_q, r_f):
    # solve the rectifier power-balance circle for i_d with i_q fixed;
    # the root nearest zero is the normal (low-loss) operating point
    a = r_f
    b = v_d
    c = r_f * i_q ** 2 + v_q * i_q + 2 * p_rec
    disc = b * b - 4 * a * c
    if np.any(disc < 0):
        raise ParameterError("p_rec", "power setpoint exceeds rectifier capability")
    return -2 * c / (b + np.sign(b) * np.sqrt(disc))


def dispatch_setpoints(topology: FeederTopology, params: Sequence[SstParams],
                       p_rec: Sequence[float], v_f: float | Sequence[float],
                       v_l: float | Sequence[float], i_q: float | Sequence[float] = 0.0,
                       p_rec_max: float | Sequence[float] = np.inf,
                       tol: float = 1e-11, max_iter: int = 200) -> SetpointSet:
    """Consistent operating setpoints for the scheduled powers ``p_rec``.

    Stands in for the supervisory scheduler: solves the feeder coupling
    together with each SST's power-balance circle (fixed point on the
    currents), then fills in the high-side voltage and DC-grid current.
    The high-side voltage follows from the averaged rectifier model, whose
    DC-link conductance is 1 S, so ``v_h = v_f - p_rec / v_f``.
    """
    n = topology.n
    p = np.broadcast_to(np.asarray(p_rec, float), (n,)).copy()
    vf = np.broadcast_to(np.asarray(v_f, float), (n,)).copy()
    vl = np.broadcast_to(np.asarray(v_l, float), (n,)).copy()
    iq = np.broadcast_to(np.asarray(i_q, float), (n,)).copy()
    pmax = np.broadcast_to(np.asarray(p_rec_max, float), (n,)).copy()
    r_f = np.array([pp.r_f for pp in params])
    r_h = np.array([pp.r_h for pp in params])

    i_d = np.zeros(n)
    for _ in range(max_iter):
        v_d, v_q = coupling_voltages(topology, i_d, iq)
        new = _current_for_power(p, v_d, v_q, iq, r_f)
        done = np.max(np.abs(new - i_d)) < tol * max(1.0, np.max(np.abs(new)))
        i_d = new
        if done:
            break
    else:
        raise ParameterError("p_rec", "feeder dispatch did not converge")
    v_d, v_q = coupling_voltages(topology, i_d, iq)
    v_h = vf - p / vf
    i_dab = idab_from_power(p, vf, v_h, vl, r_h)
    return SetpointSet(tuple(
        Setpoints(p_rec=p[k], v_f=vf[k], v_h=v_h[k], v_l=vl[k], i_q=iq[k], i_d=i_d[k],
                  v_d=v_d[k], v_q=v_q[k], i_dab=i_dab[k], p_rec_max=pmax[k])
        for k in range(n)))
