"""Compiled RK4 kernel for the coupled feeder + storage system.

Mirrors ``Simulator.rhs`` term by term; the numpy path stays the reference and
the test suite checks the two agree. Parameters arrive packed in matrices whose
column order is fixed by ``SST_COLS``, ``DESD_COLS`` and ``SP_COLS``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

SST_COLS = ("L_f", "r_f", "C_f", "k1", "k2", "k3", "k4", "k5", "k6", "C_h", "r_h", "C_l",
            "L_s", "n_s", "f_s", "k7", "k8")
DESD_COLS = ("C_o", "r_o", "C_in", "r_in", "I_b_max", "kappa_p", "u_b_min", "u_b_max", "guard")
SP_COLS = ("v_f", "i_q", "v_l", "i_dab")


def pack(obj, cols) -> np.ndarray:
    """``(n, len(cols))`` matrix of the stacked fields/properties ``cols``."""
    return np.ascontiguousarray(np.column_stack([np.asarray(getattr(obj, c), float)
                                                 for c in cols]))


@njit(cache=True)
def _clip(v, lo, hi):
    return lo if v < lo else (hi if v > hi else v)


@njit(cache=True)
def rhs(t, y, dy, u_out, P, D, SP, r, x, omega, theta0, vgd, vgq, prefix, full,
        I_pv, I_w, I_l, v_b, tau_f, u_prev, hold, u_hold):
    n = y.shape[0]
    v_d = np.empty(n)
    v_q = np.empty(n)
    if prefix:
        ld = 0.0
        lq = 0.0
        line_d = np.empty(n)
        line_q = np.empty(n)
        for k in range(n - 1, -1, -1):
            ld += y[k, 0]
            lq += y[k, 1]
            line_d[k] = ld
            line_q[k] = lq
        ad = vgd
        aq = vgq
        for k in range(n):
            ad += r[k] * line_d[k] - x[k] * line_q[k]
            aq += x[k] * line_d[k] + r[k] * line_q[k]
            v_d[k] = ad
            v_q[k] = aq
    else:
        sd = 0.0
        sq = 0.0
        for k in range(n):
            sd += y[k, 0]
            sq += y[k, 1]
        for k in range(n):
            v_d[k] = vgd + r[k] * sd - x[k] * sq
            v_q[k] = vgq + r[k] * sd + x[k] * sq
    for i in range(n):
        L_f, r_f, C_f = P[i, 0], P[i, 1], P[i, 2]
        k1, k2, k3, k4, k5, k6 = P[i, 3], P[i, 4], P[i, 5], P[i, 6], P[i, 7], P[i, 8]
        C_h, r_h, C_l, L_s, n_s, f_s, k7, k8 = (P[i, 9], P[i, 10], P[i, 11], P[i, 12],
                                                P[i, 13], P[i, 14], P[i, 15], P[i, 16])
        C_o, r_o, C_in, r_in = D[i, 0], D[i, 1], D[i, 2], D[i, 3]
        I_max, kap, u_lo, u_hi, guard = D[i, 4], D[i, 5], D[i, 6], D[i, 7], D[i, 8]
        vf_s, iq_s, vl_s, idab_s = SP[i, 0], SP[i, 1], SP[i, 2], SP[i, 3]
        i_d, i_q, v_f, v_h, v_l = y[i, 0], y[i, 1], y[i, 2], y[i, 3], y[i, 4]
        xi1, xi2, xi3, xi4 = y[i, 5], y[i, 6], y[i, 7], y[i, 8]
        v_o, v_in, filt = y[i, 9], y[i, 10], y[i, 11]
        w = omega[i]

        d1 = _clip(k4 * (k1 * (vf_s - v_f) + k2 * xi1 - i_d) + k3 * xi2, -1.0, 1.0)
        d2 = _clip(k5 * (iq_s - i_q) + k6 * xi3, -1.0, 1.0)
        dy[i, 0] = -r_f / L_f * i_d + w * i_q + d1 * v_f / L_f - v_d[i] / L_f
        dy[i, 1] = -w * i_d - r_f / L_f * i_q + d2 * v_f / L_f - v_q[i] / L_f
        active = d1 * i_d + d2 * i_q
        dvf = -(v_f - v_h) / C_f - active / (2 * C_f)
        if full:
            th2 = 2 * (w * t + theta0[i])
            dvf += (active * np.cos(th2) + (d1 * i_q + d2 * i_d) * np.sin(th2)) / C_f
        dy[i, 2] = dvf
        e = vf_s - v_f
        dy[i, 5] = e
        dy[i, 6] = k1 * e + k2 * xi1 - i_d
        dy[i, 7] = iq_s - i_q

        phi = _clip(k7 * (vl_s - v_l) + k8 * xi4, -1.0, 1.0)
        g = n_s * phi * (1 - phi) / (2 * f_s * L_s)
        I_b = (v_o - v_l) / r_o
        I_dab = I_pv[i] + I_w[i] + I_b - I_l[i]
        dy[i, 3] = (v_f - v_h) / (C_h * r_h) - g * v_l / C_h
        dvl = g * v_h / C_l - I_dab / C_l
        dy[i, 4] = dvl
        dy[i, 8] = vl_s - v_l

        raw = idab_s - (I_pv[i] + I_w[i] - I_l[i])
        ref = _clip(raw, -I_max, I_max)
        dfilt = (ref - filt) / tau_f
        if hold:
            u = u_hold[i]
        elif v_in <= guard:
            u = u_prev[i]
        else:
            u = ((1 - kap) * (v_o - v_l) / r_o + kap * filt + r_o * C_o * dfilt
                 + C_o * dvl) / v_in
        u_out[i] = u
        u_eff = _clip(u, u_lo, u_hi)
        dy[i, 9] = (v_l - v_o) / (r_o * C_o) + u_eff * v_in / C_o
        dy[i, 10] = (v_b[i] - v_in) / (C_in * r_in) - u_eff * v_o / C_in
        dy[i, 11] = dfilt


@njit(cache=True)
def advance(y, k0, nsteps, dt, P, D, SP, r, x, omega, theta0, vgd, vgq, prefix, full,
            I_pv, I_w, I_l, v_b, tau_f, u_prev, hold, u_hold, bad):
    """RK4 ``nsteps`` steps in place. Returns the number of completed steps;
    on divergence ``bad`` receives ``(sst, column)`` of the first bad entry."""
    n, m = y.shape
    k1 = np.empty((n, m))
    k2 = np.empty((n, m))
    k3 = np.empty((n, m))
    k4 = np.empty((n, m))
    tmp = np.empty((n, m))
    u1 = np.empty(n)
    u_s = np.empty(n)
    for s in range(nsteps):
        t = (k0 + s) * dt
        rhs(t, y, k1, u1, P, D, SP, r, x, omega, theta0, vgd, vgq, prefix, full,
            I_pv, I_w, I_l, v_b, tau_f, u_prev, hold, u_hold)
        for i in range(n):
            for j in range(m):
                tmp[i, j] = y[i, j] + dt / 2 * k1[i, j]
        rhs(t + dt / 2, tmp, k2, u_s, P, D, SP, r, x, omega, theta0, vgd, vgq, prefix, full,
            I_pv, I_w, I_l, v_b, tau_f, u_prev, hold, u_hold)
        for i in range(n):
            for j in range(m):
                tmp[i, j] = y[i, j] + dt / 2 * k2[i, j]
        rhs(t + dt / 2, tmp, k3, u_s, P, D, SP, r, x, omega, theta0, vgd, vgq, prefix, full,
            I_pv, I_w, I_l, v_b, tau_f, u_prev, hold, u_hold)
        for i in range(n):
            for j in range(m):
                tmp[i, j] = y[i, j] + dt * k3[i, j]
        rhs(t + dt, tmp, k4, u_s, P, D, SP, r, x, omega, theta0, vgd, vgq, prefix, full,
            I_pv, I_w, I_l, v_b, tau_f, u_prev, hold, u_hold)
        for i in range(n):
            for j in range(m):
                v = y[i, j] + dt / 6 * (k1[i, j] + 2 * k2[i, j] + 2 * k3[i, j] + k4[i, j])
                if not (abs(v) <= 1e9):
                    bad[0] = i
                    bad[1] = j
                    return s
                tmp[i, j] = v
        for i in range(n):
            for j in range(m):
                y[i, j] = tmp[i, j]
            if not hold:
                u_prev[i] = u1[i]
    return nsteps
