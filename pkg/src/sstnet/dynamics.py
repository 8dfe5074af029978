"""Averaged right-hand sides of the SST stages and the storage converter.

Every function here is pure and works elementwise, so the same code serves a
single SST (float fields) and a whole feeder (array fields, one entry per SST,
see ``SstParams.stack``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .netmodel import DesdParams, Setpoints, SstParams, coupling_voltages

# Column order of the per-SST closed-loop state used by the network-level
# functions: electrical states first, then the four PI integrators.
Z_FIELDS = ("i_d", "i_q", "v_f", "v_h", "v_l", "xi1", "xi2", "xi3", "xi4")
NZ = len(Z_FIELDS)
MODES = ("full", "fundamental")


@dataclass
class SstState:
    i_d: float
    i_q: float
    v_f: float
    xi1: float
    xi2: float
    xi3: float
    v_h: float
    v_l: float
    xi4: float

    @classmethod
    def from_z(cls, z) -> "SstState":
        """Build from a vector (or ``(n, 9)`` array) in ``Z_FIELDS`` order."""
        z = np.asarray(z)
        return cls(**{name: z[..., k] for k, name in enumerate(Z_FIELDS)})

    def to_z(self) -> np.ndarray:
        return np.stack([np.asarray(getattr(self, name), float) for name in Z_FIELDS],
                        axis=-1)


@dataclass
class DesdState:
    v_o: float
    v_in: float


@dataclass
class SstInputs:
    """Exogenous signals seen by one SST: grid-node voltages, phase, DC-grid current."""

    v_d: float
    v_q: float
    theta: float
    I_dab: float
    omega: float = 2 * np.pi * 60


class DutyCycles(NamedTuple):
    d1: float
    d2: float
    saturated: bool


class PhaseShift(NamedTuple):
    phi: float
    saturated: bool


def _clip(raw, lo, hi, clamp):
    sat = (raw < lo) | (raw > hi)
    if clamp:
        return np.clip(raw, lo, hi), sat
    return raw, sat


def duty_cycles(state: SstState, params: SstParams, setpoints: Setpoints,
                clamp: bool = False) -> DutyCycles:
    """Rectifier d/q duty cycles from the cascaded PI laws.

    The flag reports whether either raw duty cycle left ``[-1, 1]``; the
    returned values are clipped only when ``clamp`` is set.
    """
    p = params
    d1 = (p.k4 * (p.k1 * (setpoints.v_f - state.v_f) + p.k2 * state.xi1 - state.i_d)
          + p.k3 * state.xi2)
    d2 = p.k5 * (setpoints.i_q - state.i_q) + p.k6 * state.xi3
    d1, s1 = _clip(d1, -1.0, 1.0, clamp)
    d2, s2 = _clip(d2, -1.0, 1.0, clamp)
    return DutyCycles(d1, d2, s1 | s2)


def rectifier_rhs(state: SstState, inputs: SstInputs, params: SstParams,
                  setpoints: Setpoints, mode: str = "fundamental",
                  clamp: bool = False) -> tuple:
    """Time derivatives of ``(i_d, i_q, v_f, xi1, xi2, xi3)``.

    ``mode="full"`` keeps the second-harmonic terms of the DC-link voltage;
    ``mode="fundamental"`` drops them and no longer depends on ``theta``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    p = params
    d1, d2, _ = duty_cycles(state, p, setpoints, clamp)
    di_d = (-p.r_f / p.L_f * state.i_d + inputs.omega * state.i_q
            + d1 * state.v_f / p.L_f - inputs.v_d / p.L_f)
    di_q = (-inputs.omega * state.i_d - p.r_f / p.L_f * state.i_q
            + d2 * state.v_f / p.L_f - inputs.v_q / p.L_f)
    active = d1 * state.i_d + d2 * state.i_q
    dv_f = -(state.v_f - state.v_h) / p.C_f - active / (2 * p.C_f)
    if mode == "full":
        two_theta = 2 * inputs.theta
        dv_f = dv_f + (active * np.cos(two_theta)
                       + (d1 * state.i_q + d2 * state.i_d) * np.sin(two_theta)) / p.C_f
    e_vf = setpoints.v_f - state.v_f
    dxi1 = e_vf
    dxi2 = p.k1 * e_vf + p.k2 * state.xi1 - state.i_d
    dxi3 = setpoints.i_q - state.i_q
    return di_d, di_q, dv_f, dxi1, dxi2, dxi3


def dab_coupling(phi, n, f, L):
    """Averaged DAB transfer conductance ``n phi (1 - phi) / (2 f L)``."""
    return n * phi * (1 - phi) / (2 * f * L)


def dab_phase_shift(state: SstState, params: SstParams, setpoints: Setpoints,
                    clamp: bool = True) -> PhaseShift:
    """PI phase-shift ratio of the DAB, limited to ``[-1, 1]``."""
    raw = params.k7 * (setpoints.v_l - state.v_l) + params.k8 * state.xi4
    phi, sat = _clip(raw, -1.0, 1.0, clamp)
    return PhaseShift(phi, sat)


def dab_rhs(state: SstState, I_dab, params: SstParams, setpoints: Setpoints,
            clamp: bool = True) -> tuple:
    """Time derivatives of ``(v_h, v_l, xi4)``."""
    p = params
    phi, _ = dab_phase_shift(state, p, setpoints, clamp)
    g = dab_coupling(phi, p.n_s, p.f_s, p.L_s)
    dv_h = (state.v_f - state.v_h) / (p.C_h * p.r_h) - g * state.v_l / p.C_h
    dv_l = g * state.v_h / p.C_l - I_dab / p.C_l
    dxi4 = setpoints.v_l - state.v_l
    return dv_h, dv_l, dxi4


def desd_rhs(state: DesdState, v_l, u_b, v_b, params: DesdParams) -> tuple:
    """Time derivatives of the storage converter voltages ``(v_o, v_in)``.

    ``u_b`` moves charge from the battery-side capacitor to the bus-side one
    without loss: ``C_o v_o dv_o + C_in v_in dv_in`` does not depend on it.
    """
    p = params
    dv_o = (v_l - state.v_o) / (p.r_o * p.C_o) + u_b * state.v_in / p.C_o
    dv_in = (v_b - state.v_in) / (p.C_in * p.r_in) - u_b * state.v_o / p.C_in
    return dv_o, dv_in


def battery_current(v_o, v_l, r_o):
    """Storage output current into the DC bus."""
    return (v_o - v_l) / r_o


def feeder_rhs(z, t, topology, params: SstParams, setpoints: Setpoints, I_dab,
               mode: str = "fundamental", clamp: bool = False) -> np.ndarray:
    """Rectifier + DAB closed loop of every SST on the feeder.

    ``z`` is ``(n, 9)`` in ``Z_FIELDS`` order; ``params`` and ``setpoints`` are
    stacked (array fields). Returns ``dz/dt`` with the same shape.
    """
    z = np.asarray(z, dtype=float)
    state = SstState.from_z(z)
    v_d, v_q = coupling_voltages(topology, state.i_d, state.i_q)
    omega = topology.omegas
    inputs = SstInputs(v_d, v_q, omega * t + np.asarray(topology.theta0), I_dab, omega)
    di_d, di_q, dv_f, dxi1, dxi2, dxi3 = rectifier_rhs(state, inputs, params, setpoints,
                                                       mode, clamp)
    dv_h, dv_l, dxi4 = dab_rhs(state, I_dab, params, setpoints, clamp)
    return np.stack([di_d, di_q, dv_f, dv_h, dv_l, dxi1, dxi2, dxi3, dxi4], axis=-1)
