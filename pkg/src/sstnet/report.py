"""Run summaries, stability reports and the emitted plotting script."""

from __future__ import annotations

import numpy as np

from .netmodel import DesdParams, SetpointSet
from .simengine import Scenario, Trajectory
from .stability import (assemble_linearization, assess_stability, envelope_closed_forms,
                        find_equilibrium, integrate_envelopes, vin_envelope)

SETTLE_FRACTION = 1e-3   # |delta| below this fraction of I_b_max counts as settled


def settling_time(t, delta, I_b_max, t_event, t_next=None, fraction=SETTLE_FRACTION):
    """Time after ``t_event`` from which every ``|delta_i|`` stays below
    ``fraction * I_b_max`` up to ``t_next`` (default: the end of the run);
    ``None`` if that never happens."""
    after = (t >= t_event) & (t < (np.inf if t_next is None else t_next))
    ok = np.all(np.abs(delta) < fraction * np.asarray(I_b_max), axis=1)
    idx = np.flatnonzero(after)
    if idx.size == 0:
        return None
    bad = idx[~ok[idx]]
    if bad.size == 0:
        return 0.0
    if bad[-1] == idx[-1]:
        return None
    return float(t[bad[-1] + 1] - t_event)


def event_times(sc: Scenario, traj: Trajectory) -> list[tuple[str, float]]:
    events = [(f"load step at SST {s.sst + 1}", s.t) for s in sc.sources.steps]
    events += [(f"setpoints applied (SST {r['sst']})", r["t"]) for r in traj.log
               if r["kind"] == "applied"]
    return sorted(events, key=lambda e: e[1])


def storage_power(traj: Trajectory, desd: DesdParams) -> np.ndarray:
    """Power drawn from each storage input stage, ``v_o v_in u_b`` with the
    duty limited as in the converter."""
    u = np.clip(traj["u_b"], desd.u_b_min, desd.u_b_max)
    return traj["v_o"] * traj["v_in"] * u


def envelope_verdicts(sc: Scenario, traj: Trajectory, safety: float = 2.0) -> list[dict]:
    """Per-SST envelope check of the recorded battery-side voltage.

    ``p_max`` is ``safety`` times the largest storage power seen in the run.
    """
    D = DesdParams.stack(sc.desd)
    p = storage_power(traj, D)
    steps = int(round(sc.t_end / sc.dt))
    p_max = safety * np.max(np.abs(p), axis=0)
    v0 = traj["v_in"][0]
    # all SSTs at once: the bound functions work elementwise
    _, lo, hi = integrate_envelopes(D, p_max, v0, sc.dt, steps, sc.record_every)
    k = min(len(lo), len(traj.t))
    out = []
    for i in range(sc.n):
        d = sc.desd[i]
        env = vin_envelope(d, float(p_max[i]), float(v0[i]))
        v = traj["v_in"][:k, i]
        tol = 1e-9 * max(1.0, d.v_b_max)
        inside = bool(np.all(lo[:k, i] - tol <= v) and np.all(v <= hi[:k, i] + tol))
        out.append(dict(sst=i + 1, p_max=float(p_max[i]), v_min_roots=env.v_min_roots,
                        v_max_root=env.v_max_root, admissible=env.admissible, inside=inside))
    return out


def setpoint_table(before: SetpointSet, after: SetpointSet) -> str:
    rows = ["SST   P_rec before (kW)   P_rec after (kW)   d i_d (A)      d i_q (A)      d v_d (V)"]
    for i, (b, a) in enumerate(zip(before, after)):
        rows.append(f"{i + 1:<5d} {b.p_rec / 1e3:>18.5f} {a.p_rec / 1e3:>18.5f} "
                    f"{a.i_d - b.i_d:>13.6g} {a.i_q - b.i_q:>13.6g} {a.v_d - b.v_d:>13.6g}")
    return "\n".join(rows)


def summary(sc: Scenario, traj: Trajectory, envelopes: bool = True) -> str:
    I_max = np.array([d.I_b_max for d in sc.desd])
    lines = [f"scenario: {sc.name or '(unnamed)'}",
             f"SSTs: {sc.n}   mode: {sc.mode}   dt: {sc.dt:g} s   t_end: {sc.t_end:g} s   "
             f"seed: {sc.seed}",
             f"max |delta| (A): {np.max(np.abs(traj['delta'])):.6g}", "",
             "events (settled when every |delta| < 0.1 % of I_b_max until the next event):"]
    events = event_times(sc, traj)
    for label, t in events:
        later = [e for _, e in events if e > t]
        ts = settling_time(traj.t, traj["delta"], I_max, t, later[0] if later else None)
        lines.append(f"  t = {t:.4f} s  {label}: "
                     + ("not settled by t_end" if ts is None else f"settled after {ts:.4f} s"))
    sharing = [r for r in traj.log if r["kind"] == "sharing"]
    for r in sharing:
        applied = [a["t"] for a in traj.log if a["kind"] == "applied" and a["t"] >= r["t"]]
        line = (f"  sharing at t = {r['t']:.4f} s for SST {r['sst']} ({r['method']}, "
                f"dP = {r['delta_P']:.3f} W): {r['outcome']}")
        if r["outcome"] == "reverted":
            line += f" ({r['reason']})"
        elif applied:
            ts = settling_time(traj.t, traj["delta"], I_max, applied[0])
            if ts is not None:
                line += (f"; transient window {applied[0] + ts - r['t']:.4f} s "
                         f"(delay {applied[0] - r['t']:.4f} s + settling {ts:.4f} s)")
        lines.append(line)
    if not sc.sharing.enabled:
        lines.append("  sharing disabled")
    elif not sharing:
        lines.append("  no storage saturation, sharing not triggered")
    if traj.setpoints_final is not None and sharing:
        lines += ["", "setpoints before/after sharing:",
                  setpoint_table(traj.setpoints_initial, traj.setpoints_final)]
    if envelopes:
        lines += ["", "battery-side voltage envelopes (p_max = 2 x observed):"]
        for e in envelope_verdicts(sc, traj):
            lines.append(f"  SST {e['sst']}: p_max {e['p_max']:.1f} W, v_min roots "
                         f"({e['v_min_roots'][0]:.4f}, {e['v_min_roots'][1]:.4f}) V, v_max root "
                         f"{e['v_max_root']:.4f} V, admissible {e['admissible']}, "
                         f"inside envelopes {e['inside']}")
    return "\n".join(lines) + "\n"


def stability_report(sc: Scenario, eigen: bool = True, envelope: bool = True,
                     p_max: float | None = None) -> str:
    """Eigenvalue verdict at the scheduled operating point and envelope roots."""
    lines = [f"scenario: {sc.name or '(unnamed)'}"]
    if eigen:
        from .netmodel import SstParams
        P = SstParams.stack(sc.params)
        S = sc.setpoints.stacked()
        eq = find_equilibrium(P, S, sc.topology)
        lin = assemble_linearization(eq.z, P, S, sc.topology, DesdParams.stack(sc.desd))
        rep = assess_stability(lin)
        lines += [f"equilibrium residual: {eq.residual:.3e} ({eq.iterations} Newton iterations)",
                  f"stable: {str(rep.stable).lower()}",
                  f"margin: {rep.margin:.6g} 1/s",
                  f"eigenvalues ({len(rep.eigenvalues)}):"]
        for lam in sorted(rep.eigenvalues, key=lambda z: (z.real, z.imag)):
            lines.append(f"  {lam.real:+.6e} {lam.imag:+.6e}j")
    if envelope:
        lines.append("battery-side voltage envelopes:")
        for i, d in enumerate(sc.desd):
            pm = p_max if p_max is not None else 2 * d.I_b_max * d.v_b_max
            env = vin_envelope(d, pm, 0.5 * (d.v_b_min + d.v_b_max))
            cf = envelope_closed_forms(d, pm)
            lines.append(
                f"  SST {i + 1}: p_max {pm:.1f} W, feasible {env.feasible}, numeric roots "
                f"v_min ({env.v_min_roots[0]:.6g}, {env.v_min_roots[1]:.6g}) v_max "
                f"{env.v_max_root:.6g}; closed forms printed {tuple(round(float(x), 6) for x in cf['printed'])}"
                f" dimensional {tuple(round(float(x), 6) for x in cf['dimensional'])}")
    return "\n".join(lines) + "\n"


PLOT_SCRIPT = '''"""Storage current against its reference for every SST.

Usage: python plot_storage.py [trajectory.csv]
"""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "trajectory.csv"
series = defaultdict(lambda: defaultdict(list))
with open(path) as fh:
    for row in csv.DictReader(fh):
        s = series[int(row["sst"])]
        for key in ("t", "I_b", "I_b_ref"):
            s[key].append(float(row[key]))

n = len(series)
fig, axes = plt.subplots(n, 1, sharex=True, figsize=(8, 1.8 * n), squeeze=False)
for ax, (sst, s) in zip(axes[:, 0], sorted(series.items())):
    ax.plot(s["t"], s["I_b_ref"], "k--", lw=1, label="I_b^r")
    ax.plot(s["t"], s["I_b"], lw=1, label="I_b")
    ax.set_ylabel(f"SST{sst} (A)")
axes[0, 0].legend(loc="upper right")
axes[-1, 0].set_xlabel("t (s)")
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + "_storage.png", dpi=120)
'''
