"""Equilibria, cascade linearization, eigenvalue verdicts and storage-voltage envelopes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .dynamics import NZ, feeder_rhs
from .integrate import rk4
from .netmodel import DesdParams, FeederTopology, Setpoints, SstParams


class EquilibriumError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.residual = residual


class Equilibrium(NamedTuple):
    z: np.ndarray          # (n, 9), Z_FIELDS order
    residual: float
    iterations: int


@dataclass
class LinearizedSystem:
    """Block upper-triangular small-signal model ``[[Gamma, P], [0, K_p]]``."""

    Gamma: np.ndarray
    P_block: np.ndarray
    K_p: np.ndarray
    z_star: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        n = self.K_p.shape[0]
        top = np.hstack([self.Gamma, self.P_block])
        bottom = np.hstack([np.zeros((n, self.Gamma.shape[0])), self.K_p])
        return np.vstack([top, bottom])


class StabilityReport(NamedTuple):
    eigenvalues: np.ndarray
    stable: bool
    margin: float


@dataclass
class VinEnvelope:
    p_max: float
    v_min_roots: tuple[float, float]
    v_max_root: float
    feasible: bool
    admissible: bool


def jacobian(fun, x, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian, step ``rel_step * (1 + |x_k|)``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    J = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = rel_step * (1.0 + abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (np.asarray(fun(xp)) - np.asarray(fun(xm))).ravel() / (2 * h)
    return J


def gamma_function(params: SstParams, setpoints: Setpoints, topology: FeederTopology):
    """Flattened closed-loop map ``z -> dz/dt`` with the DC-grid current at its setpoint."""
    n = topology.n

    def gamma(zflat):
        z = np.asarray(zflat).reshape(n, NZ)
        return feeder_rhs(z, 0.0, topology, params, setpoints, setpoints.i_dab,
                          mode="fundamental").ravel()

    return gamma


def initial_guess(params: SstParams, setpoints: Setpoints, omega=2 * np.pi * 60) -> np.ndarray:
    """Equilibrium estimate read off the setpoints and steady-state PI algebra."""
    p, s = params, setpoints
    v_h = s.v_h
    g = s.i_dab / v_h
    # smaller root of n phi (1 - phi) / (2 f L) = g
    h = 2 * p.f_s * p.L_s * g / p.n_s
    phi = 2 * h / (1 + np.sqrt(np.maximum(1 - 4 * h, 0.0)))
    d1 = (s.v_d + p.r_f * s.i_d - omega * p.L_f * s.i_q) / s.v_f
    d2 = (s.v_q + p.r_f * s.i_q + omega * p.L_f * s.i_d) / s.v_f
    z = np.stack([
        s.i_d, s.i_q, s.v_f, v_h, s.v_l,
        s.i_d / p.k2, d1 / p.k3, d2 / p.k6, phi / p.k8,
    ], axis=-1)
    return np.atleast_2d(z).astype(float)


def find_equilibrium(params: SstParams, setpoints: Setpoints, topology: FeederTopology,
                     guess=None, tol: float = 1e-9, max_iter: int = 30) -> Equilibrium:
    """Newton iteration on the fundamental-frequency closed loop.

    ``params`` and ``setpoints`` are stacked over the feeder. Raises
    ``EquilibriumError`` when the residual infinity-norm does not drop below
    ``tol`` within ``max_iter`` iterations.
    """
    n = topology.n
    gamma = gamma_function(params, setpoints, topology)
    z = (initial_guess(params, setpoints, topology.omegas) if guess is None
         else np.asarray(guess, float).reshape(n, NZ)).ravel().copy()
    f = gamma(z)
    best = np.max(np.abs(f))
    for it in range(max_iter + 1):
        res = np.max(np.abs(f))
        best = min(best, res)
        if res < tol:
            return Equilibrium(z.reshape(n, NZ), float(res), it)
        if it == max_iter:
            break
        J = jacobian(gamma, z)
        step = np.linalg.solve(J, -f)
        # damp until the residual stops growing
        lam = 1.0
        while True:
            trial = z + lam * step
            ft = gamma(trial)
            if np.max(np.abs(ft)) < res or lam < 1e-4:
                break
            lam /= 2
        z, f = trial, ft
    raise EquilibriumError("no equilibrium found", float(best))


def assemble_linearization(z_star, params: SstParams, setpoints: Setpoints,
                           topology: FeederTopology, desd: DesdParams) -> LinearizedSystem:
    """Jacobian of the closed loop at ``z_star`` plus the storage-error block.

    Tracking error ``delta_i`` enters only the low-voltage bus equation of
    SST ``i`` (coefficient ``-1/C_l``) and decays at ``-kappa_p / (r_o C_o)``.
    """
    n = topology.n
    z_star = np.asarray(z_star, float).reshape(n, NZ)
    Gamma = jacobian(gamma_function(params, setpoints, topology), z_star.ravel())
    P = np.zeros((NZ * n, n))
    C_l = np.broadcast_to(np.asarray(params.C_l, float), (n,))
    for i in range(n):
        P[NZ * i + 4, i] = -1.0 / C_l[i]
    K_p = np.diag(-np.broadcast_to(np.asarray(desd.tracking_rate, float), (n,)))
    return LinearizedSystem(Gamma, P, K_p, z_star)


def assess_stability(sys: LinearizedSystem) -> StabilityReport:
    eig = np.linalg.eigvals(sys.matrix)
    worst = float(np.max(eig.real))
    return StabilityReport(eig, worst < 0, -worst)


# -- storage input-voltage envelopes -------------------------------------------

def phi_min(v, params: DesdParams, p_max: float):
    """Lower bound of ``dv_in/dt`` for ``v_in = v > 0``."""
    p = params
    return -v / (p.r_in * p.C_in) - p_max / (p.C_in * v) + p.v_b_min / (p.r_in * p.C_in)


def phi_max(v, params: DesdParams, p_max: float):
    """Upper bound of ``dv_in/dt`` for ``v_in = v > 0``."""
    p = params
    return -v / (p.r_in * p.C_in) + p_max / (p.C_in * v) + p.v_b_max / (p.r_in * p.C_in)


def vin_envelope(params: DesdParams, p_max: float, v_in0: float) -> VinEnvelope:
    """Equilibria of the bounding models and admissibility of ``v_in0``.

    Roots are found by bracketing the bound functions themselves.
    """
    if p_max < 0:
        raise ValueError("p_max must be >= 0")
    p = params
    big = 10 * (p.v_b_max + np.sqrt(p.r_in * p_max) + 1.0)
    if p_max == 0:
        v1, v2, feasible = 0.0, float(p.v_b_min), True
    else:
        v_peak = np.sqrt(p.r_in * p_max)
        if phi_min(v_peak, p, p_max) < 0:
            v1 = v2 = float("nan")
            feasible = False
        else:
            tiny = v_peak * 1e-12
            v1 = brentq(phi_min, tiny, v_peak, args=(p, p_max), xtol=1e-14, rtol=1e-15)
            v2 = brentq(phi_min, v_peak, big, args=(p, p_max), xtol=1e-14, rtol=1e-15)
            feasible = True
    tiny = 1e-12 * max(1.0, p.v_b_max)
    vmax = brentq(phi_max, tiny, big, args=(p, p_max), xtol=1e-14, rtol=1e-15)
    return VinEnvelope(float(p_max), (float(v1), float(v2)), float(vmax), feasible,
                       bool(feasible and v_in0 > v1))


def envelope_closed_forms(params: DesdParams, p_max: float) -> dict:
    """Closed-form envelope roots in two readings, for side-by-side reporting.

    ``"printed"`` uses ``C_in`` in the radicand and ``v_b_min`` for the upper
    root; ``"dimensional"`` uses ``r_in`` and ``v_b_max``, which is what the
    bound functions reduce to.
    """
    p = params

    def roots(a, b_lo, b_hi):
        disc = b_lo ** 2 - 4 * a * p_max
        r = np.sqrt(disc) if disc >= 0 else float("nan")
        return ((b_lo - r) / 2, (b_lo + r) / 2,
                (b_hi + np.sqrt(b_hi ** 2 + 4 * a * p_max)) / 2)

    return {
        "printed": roots(p.C_in, p.v_b_min, p.v_b_min),
        "dimensional": roots(p.r_in, p.v_b_min, p.v_b_max),
    }


def integrate_envelopes(params: DesdParams, p_max: float, v0: float, dt: float,
                        steps: int, every: int = 1):
    """Solutions of the lower and upper bounding models from ``v0``.

    ``params``, ``p_max`` and ``v0`` may be stacked/arrays to integrate
    several storage units at once. Returns ``(t, v_min, v_max)``.
    """
    def f(t, y):
        return np.array([phi_min(y[0], params, p_max), phi_max(y[1], params, p_max)])

    v0 = np.asarray(v0, dtype=float)
    t, y = rk4(f, np.array([v0, v0]), 0.0, dt, steps, every)
    return t, y[:, 0], y[:, 1]


def p_signal(v_o, v_l, I_b_ref, dI_b_ref, phi_vl, params: DesdParams):
    """Power drawn from the storage input stage by the linearizing law."""
    p = params
    return v_o * ((1 - p.kappa_p) * (v_o - v_l) / p.r_o + p.kappa_p * I_b_ref
                  + p.r_o * p.C_o * dI_b_ref + p.C_o * phi_vl)
