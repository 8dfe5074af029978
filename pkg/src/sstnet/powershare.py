"""Multi-SST power sharing when one storage unit hits its current limit.

Two coordinator-side setpoint updates:

* constant current: the overloaded SST ``m`` moves its d-axis current, every
  node voltage shifts by the same drop, the other SSTs keep their currents and
  absorb the change through their power setpoints;
* constant voltage: every node voltage except ``m``'s stays put, so only the
  immediate radial neighbours change their current references.

Indices are 0-based. Infeasible updates do not raise; they come back as a
``SharingResult`` with ``reverted=True`` and the original setpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .netmodel import FeederTopology, SetpointSet, Setpoints, SstParams, idab_from_power

CONSTANT_CURRENT = "constant-current"
CONSTANT_VOLTAGE = "constant-voltage"
METHODS = (CONSTANT_CURRENT, CONSTANT_VOLTAGE)


class InfeasibleTransfer(ValueError):
    pass


@dataclass(frozen=True)
class SharingEvent:
    m: int
    delta_P: float
    method: str = CONSTANT_CURRENT
    delay: float = 0.0

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be a valid SST index")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass
class SharingResult:
    setpoints: SetpointSet
    reverted: bool = False
    reason: str | None = None
    # which relation produced each SST's new setpoints
    sources: dict[int, str] = field(default_factory=dict)


def detect_saturation(I_b_ref, I_b_max) -> bool:
    """True once the reference current reaches the storage limit."""
    return bool(abs(I_b_ref) >= I_b_max)


def power_balance_residual(sp: Setpoints, r_f: float) -> float:
    """Rectifier power-balance circle residual; zero for consistent setpoints."""
    return ((sp.i_d + sp.v_d / (2 * r_f)) ** 2 + (sp.i_q + sp.v_q / (2 * r_f)) ** 2
            - (sp.v_d ** 2 + sp.v_q ** 2) / (4 * r_f ** 2) + 2 * sp.p_rec / r_f)


def balance_scale(sp: Setpoints, r_f: float) -> float:
    """Magnitude of the largest term of the balance circle, for relative checks."""
    return max((sp.v_d ** 2 + sp.v_q ** 2) / (4 * r_f ** 2), 1.0)


def power_from_balance(i_d, i_q, v_d, v_q, r_f):
    """Rectifier power consistent with the given currents and node voltages."""
    return -(v_d * i_d + v_q * i_q) / 2 - r_f * (i_d ** 2 + i_q ** 2) / 2


def delta_id_quadratic(sp: Setpoints, r_f: float, R: float, X: float, delta_P: float) -> float:
    """d-axis current change that moves the rectifier power by ``delta_P``.

    ``R + jX`` is the impedance through which the node voltage responds to
    the SST's own current (``i_q`` held fixed). Returns the root that
    vanishes with ``delta_P``.
    """
    a = r_f + R
    b = 2 * r_f * sp.i_d + sp.v_d + R * sp.i_d + X * sp.i_q
    c = 2 * delta_P
    if c == 0:
        return 0.0
    disc = b * b - 4 * a * c
    if disc < 0:
        raise InfeasibleTransfer(
            f"power change {delta_P:g} W exceeds what the feeder can transfer")
    q = -(b + np.copysign(np.sqrt(disc), b)) / 2
    return float(c / q)


def voltage_drop(d_i_d, d_i_q, topology: FeederTopology, m: int) -> tuple[float, float]:
    """Node-voltage change caused by a current change at SST ``m``."""
    R, X = topology.path_impedance(m)
    return d_i_d * R - d_i_q * X, d_i_d * X + d_i_q * R


def _r_f(params, i):
    return params[i].r_f if isinstance(params, Sequence) else params.r_f


def _r_h(params, i):
    return params[i].r_h if isinstance(params, Sequence) else params.r_h


def _target_power(sp: Setpoints, delta_P: float) -> float:
    return min(sp.p_rec + delta_P, sp.p_rec_max)


def _finish(setpoints: SetpointSet, new: list[dict], params, sources) -> SharingResult:
    for i, changes in enumerate(new):
        if changes is None:
            continue
        sp = setpoints[i]
        p = changes["p_rec"]
        if p > sp.p_rec_max:
            return SharingResult(setpoints, True,
                                 f"SST {i + 1}: {p:.1f} W exceeds limit {sp.p_rec_max:.1f} W",
                                 {})
    out = setpoints
    for i, changes in enumerate(new):
        if changes is None:
            continue
        sp = out[i]
        changes["i_dab"] = float(idab_from_power(changes["p_rec"], sp.v_f, sp.v_h, sp.v_l,
                                                 _r_h(params, i)))
        out = out.replace(i, **changes)
    return SharingResult(out, False, None, sources)


def method1_constant_current(setpoints: SetpointSet, topology: FeederTopology,
                             params: Sequence[SstParams] | SstParams,
                             event: SharingEvent) -> SharingResult:
    """Constant-current sharing: all node voltages shift, helper currents stay."""
    m = event.m
    if event.delta_P == 0:
        return SharingResult(setpoints)
    sp_m = setpoints[m]
    r_f = _r_f(params, m)
    dP = _target_power(sp_m, event.delta_P) - sp_m.p_rec
    R, X = topology.path_impedance(m)
    try:
        d_id = delta_id_quadratic(sp_m, r_f, R, X, dP)
    except InfeasibleTransfer as exc:
        return SharingResult(setpoints, True, str(exc), {})
    dv_d, dv_q = voltage_drop(d_id, 0.0, topology, m)

    new: list[dict | None] = []
    sources = {}
    for i, sp in enumerate(setpoints):
        i_d = sp.i_d + d_id if i == m else sp.i_d
        v_d, v_q = sp.v_d + dv_d, sp.v_q + dv_q
        p = power_from_balance(i_d, sp.i_q, v_d, v_q, _r_f(params, i))
        new.append(dict(i_d=float(i_d), v_d=float(v_d), v_q=float(v_q), p_rec=float(p)))
        sources[i] = "current-quadratic" if i == m else "power-balance"
    return _finish(setpoints, new, params, sources)


def _thevenin_split(topology: FeederTopology, m: int):
    """Impedance seen at ``m`` with both neighbour voltages held, and the
    fraction of ``m``'s current change carried by its upstream line."""
    r, x = topology.r, topology.x
    z_up = complex(r[m], x[m])
    if m + 1 < topology.n:
        z_dn = complex(r[m + 1], x[m + 1])
        z_eq = z_up * z_dn / (z_up + z_dn)
        up_share = z_dn / (z_up + z_dn)
    else:
        z_dn = None
        z_eq, up_share = z_up, 1.0 + 0j
    return z_up, z_dn, z_eq, up_share


def method2_constant_voltage(setpoints: SetpointSet, topology: FeederTopology,
                             params: Sequence[SstParams] | SstParams,
                             event: SharingEvent) -> SharingResult:
    """Constant-voltage sharing: only the radial neighbours of ``m`` move.

    With node voltages of ``m-1`` and ``m+1`` pinned, the current change of
    SST ``m`` splits over its two lines in inverse proportion to their
    impedances. The upstream share is returned by SST ``m-1`` (by the
    substation when ``m`` is the first SST) and the downstream share by
    ``m+1``. When the two lines have different X/R ratios the split is
    complex, so the neighbours' q-axis references move as well.
    """
    m = event.m
    if event.delta_P == 0:
        return SharingResult(setpoints)
    sp_m = setpoints[m]
    dP = _target_power(sp_m, event.delta_P) - sp_m.p_rec
    z_up, z_dn, z_eq, up_share = _thevenin_split(topology, m)
    try:
        d_id = delta_id_quadratic(sp_m, _r_f(params, m), z_eq.real, z_eq.imag, dP)
    except InfeasibleTransfer as exc:
        return SharingResult(setpoints, True, str(exc), {})
    d_up = d_id * up_share              # change of the line current into m
    dv = z_up * d_up                    # = z_eq * d_id
    changes: dict[int, complex] = {m: complex(d_id, 0.0)}
    if m > 0:
        changes[m - 1] = -d_up
    if z_dn is not None:
        changes[m + 1] = -z_up * d_up / z_dn

    new: list[dict | None] = [None] * len(setpoints)
    sources = {}
    for i, di in changes.items():
        sp = setpoints[i]
        i_d, i_q = sp.i_d + di.real, sp.i_q + di.imag
        v_d, v_q = sp.v_d, sp.v_q
        if i == m:
            v_d, v_q = v_d + dv.real, v_q + dv.imag
        p = power_from_balance(i_d, i_q, v_d, v_q, _r_f(params, i))
        new[i] = dict(i_d=float(i_d), i_q=float(i_q), v_d=float(v_d), v_q=float(v_q),
                      p_rec=float(p))
        sources[i] = "current-quadratic" if i == m else "power-balance"
    return _finish(setpoints, new, params, sources)


def share(setpoints: SetpointSet, topology: FeederTopology, params, event: SharingEvent
          ) -> SharingResult:
    if event.method == CONSTANT_CURRENT:
        return method1_constant_current(setpoints, topology, params, event)
    return method2_constant_voltage(setpoints, topology, params, event)
