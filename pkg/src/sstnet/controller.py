"""Storage current controller: setpoint, reference current, filtering,
linearizing duty law and phase-shift inversion."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .dynamics import PhaseShift, dab_coupling
from .netmodel import DesdParams, idab_from_power


class ControllerFault(RuntimeError):
    """Raised when the storage input voltage is too low to divide by."""


class InfeasibleDutyError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerState:
    """First-order filter on the raw reference current and its derivative."""

    filt_Ibr: float = 0.0
    filt_dIbr: float = 0.0
    tau_f: float = 1e-3
    last_raw: float = 0.0

    def __post_init__(self):
        if not self.tau_f > 0:
            raise ValueError("tau_f must be > 0")


def idab_setpoint(p_rec, v_f, v_h, v_l, r_h):
    """DC-grid current setpoint for a scheduled rectifier power."""
    return idab_from_power(p_rec, v_f, v_h, v_l, r_h)


def reference_current(I_b, I_dab, I_dab_star):
    """Storage current that would bring the DC-grid current to its setpoint."""
    return I_b - I_dab + I_dab_star


def filter_step(cs: ControllerState, raw: float, dt: float) -> ControllerState:
    """Advance the reference filter by one explicit step of length ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    new = cs.filt_Ibr + dt / cs.tau_f * (raw - cs.filt_Ibr)
    return dataclasses.replace(cs, filt_Ibr=new, filt_dIbr=(new - cs.filt_Ibr) / dt,
                               last_raw=raw)


def v_l_rate(v_h, v_l, phi_s, I_dab, n_s, f_s, L_s, C_l):
    """Right-hand side of the low-voltage bus equation, used as feedforward."""
    return (dab_coupling(phi_s, n_s, f_s, L_s) * v_h - I_dab) / C_l


def linearizing_duty(v_o, v_in, v_l, I_b_ref, dI_b_ref, phi_vl, params: DesdParams):
    """Unguarded duty law; ``v_in`` must be nonzero."""
    p = params
    return ((1 - p.kappa_p) * (v_o - v_l) / p.r_o + p.kappa_p * I_b_ref
            + p.r_o * p.C_o * dI_b_ref + p.C_o * phi_vl) / v_in


def default_guard(params: DesdParams):
    return 0.01 * params.v_b_min


def control_law(ds, v_l, I_b_ref, dI_b_ref, phi_vl, params: DesdParams,
                v_in_guard: float | None = None):
    """Duty input that makes the tracking error decay at ``kappa_p / (r_o C_o)``.

    Raises ``ControllerFault`` when ``v_in`` is at or below the guard
    (1 % of ``v_b_min`` unless given).
    """
    guard = default_guard(params) if v_in_guard is None else v_in_guard
    if np.any(np.asarray(ds.v_in) <= guard):
        raise ControllerFault(f"storage input voltage {ds.v_in} at or below guard {guard}")
    return linearizing_duty(ds.v_o, ds.v_in, v_l, I_b_ref, dI_b_ref, phi_vl, params)


def duty_from_phase_shift(phi_b, params: DesdParams):
    """Converter duty ``u_b`` produced by phase-shift ratio ``phi_b``."""
    return dab_coupling(phi_b, params.n_b, params.f_b, params.L_b)


def phase_shift_from_duty(u_b, params: DesdParams) -> PhaseShift:
    """Phase-shift ratio in ``[-1, 1/2]`` that produces duty ``u_b``.

    Inputs outside the achievable duty range are clipped and flagged.
    """
    p = params
    u = np.clip(u_b, p.u_b_min, p.u_b_max)
    saturated = u != u_b
    h = 2 * p.f_b * p.L_b * u / p.n_b
    if np.any(h > 0.25 + 1e-15):
        raise InfeasibleDutyError(f"duty {u_b} beyond the converter's reach")
    root = np.sqrt(np.maximum(1 - 4 * h, 0.0))
    # 1/2 - sqrt(1 - 4h)/2 written without cancellation near h = 0
    phi = 2 * h / (1 + root)
    return PhaseShift(phi, saturated)
