"""Time-domain simulation of a feeder of SSTs with their storage units.

The coupled state of SST ``i`` is the 9-entry closed-loop vector (``Z_FIELDS``)
followed by the storage voltages ``v_o``, ``v_in`` and the low-pass filtered
storage reference current, 12 columns in all. Everything is advanced together
by fixed-step RK4; source currents are held over each step.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernel
from .controller import default_guard, linearizing_duty, phase_shift_from_duty
from .dynamics import MODES, NZ, Z_FIELDS, dab_phase_shift, desd_rhs, duty_cycles, feeder_rhs
from .dynamics import SstState
from .netmodel import (DesdParams, FeederTopology, ParameterError, SetpointSet, SstParams)
from .powershare import CONSTANT_CURRENT, METHODS, SharingEvent, detect_saturation, share
from .stability import find_equilibrium

STATE_FIELDS = Z_FIELDS + ("v_o", "v_in", "I_b_filt")
NS = len(STATE_FIELDS)

CSV_COLUMNS = ("t", "sst", "i_d", "i_q", "v_f", "v_h", "v_l", "v_o", "v_in", "I_b",
               "I_b_ref", "I_dab", "u_b", "phi_b", "delta", "sat_flags")

# bits of the sat_flags column
SAT_RECTIFIER = 1       # a rectifier duty cycle left [-1, 1]
SAT_DAB = 2             # the DAB phase shift left [-1, 1]
SAT_STORAGE_DUTY = 4    # storage duty outside its achievable range
SAT_REFERENCE = 8       # |I_b^r| >= I_b_max, reference limited
SAT_GUARD = 16          # v_in at or below the guard, duty held

SOURCE_CHANNELS = ("I_pv", "I_w", "I_l")


class SimulationDiverged(RuntimeError):
    """A state became non-finite or left any plausible range."""

    def __init__(self, t: float, sst: int, name: str, value: float):
        super().__init__(f"divergence at t={t:.6g} s in SST {sst + 1}, {name}={value!r}")
        self.t, self.sst, self.name, self.value = t, sst, name, value


def kcl_current(I_pv, I_w, I_b, I_l):
    """Net DC-grid current of a microgrid."""
    return I_pv + I_w + I_b - I_l


# -- scenario description --------------------------------------------------------

@dataclass(frozen=True)
class LoadStep:
    """Step change of one SST's source currents at time ``t`` (increments, A)."""

    t: float
    sst: int
    I_pv: float = 0.0
    I_w: float = 0.0
    I_l: float = 0.0


@dataclass(frozen=True)
class SourceProfiles:
    """Per-SST generation and load currents: base values, steps, bounded noise.

    Noise is a random walk held for ``noise_hold`` seconds per value, with
    increments uniform in ``[-a/4, a/4]`` and the walk clipped to ``[-a, a]``
    for amplitude ``a`` of the channel.
    """

    I_pv: tuple[float, ...]
    I_w: tuple[float, ...]
    I_l: tuple[float, ...]
    steps: tuple[LoadStep, ...] = ()
    noise_I_pv: float = 0.0
    noise_I_w: float = 0.0
    noise_I_l: float = 0.0
    noise_hold: float = 0.01

    def __post_init__(self):
        n = len(self.I_l)
        for ch in SOURCE_CHANNELS:
            object.__setattr__(self, ch, tuple(float(v) for v in getattr(self, ch)))
            if len(getattr(self, ch)) != n:
                raise ParameterError(f"sources.{ch}", f"expected {n} values")
            if getattr(self, "noise_" + ch) < 0:
                raise ParameterError(f"sources.noise_{ch}", "must be >= 0")
        if self.noise_hold <= 0:
            raise ParameterError("sources.noise_hold", "must be > 0")
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        for k, s in enumerate(steps):
            if not 0 <= s.sst < n:
                raise ParameterError(f"steps[{k}].sst", "no such SST")
            if s.t < 0 or (k and s.t < steps[k - 1].t):
                raise ParameterError(f"steps[{k}].t", "events must be time-ordered and >= 0")

    @property
    def n(self) -> int:
        return len(self.I_l)

    def noise_table(self, seed: int, t_end: float) -> dict[str, np.ndarray]:
        """Pre-drawn walk values, one row per hold interval."""
        rng = np.random.default_rng(seed)
        rows = int(np.ceil(t_end / self.noise_hold)) + 2
        out = {}
        for ch in SOURCE_CHANNELS:
            a = getattr(self, "noise_" + ch)
            inc = rng.uniform(-0.25, 0.25, size=(rows, self.n)) * a
            walk = np.zeros((rows, self.n))
            for k in range(1, rows):
                walk[k] = np.clip(walk[k - 1] + inc[k], -a, a)
            out[ch] = walk
        return out

    def base_at(self, t: float) -> dict[str, np.ndarray]:
        """Deterministic part (base plus steps) at time ``t``."""
        vals = {ch: np.array(getattr(self, ch)) for ch in SOURCE_CHANNELS}
        for s in self.steps:
            if s.t <= t:
                for ch in SOURCE_CHANNELS:
                    vals[ch][s.sst] += getattr(s, ch)
        return vals


@dataclass(frozen=True)
class SharingPolicy:
    method: str = CONSTANT_CURRENT
    tick: float = 0.01
    delay: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError("sharing.method", f"must be one of {METHODS}")
        if self.tick <= 0:
            raise ParameterError("sharing.tick", "must be > 0")
        if self.delay < 0:
            raise ParameterError("sharing.delay", "must be >= 0")


@dataclass(frozen=True)
class Scenario:
    """Everything needed for one reproducible run."""

    topology: FeederTopology
    params: tuple[SstParams, ...]
    desd: tuple[DesdParams, ...]
    setpoints: SetpointSet
    sources: SourceProfiles
    v_b: tuple[float, ...]
    t_end: float
    dt: float = 1e-5
    mode: str = "fundamental"
    seed: int = 0
    sharing: SharingPolicy = SharingPolicy()
    tau_f: float = 1e-3
    controller_rate: float = 0.0     # 0: continuous controller, else ZOH rate in Hz
    record_every: int = 100
    name: str = ""

    def __post_init__(self):
        n = self.topology.n
        for key in ("params", "desd", "v_b"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
            if len(getattr(self, key)) != n:
                raise ParameterError(key, f"expected {n} entries")
        if len(self.setpoints) != n:
            raise ParameterError("setpoints", f"expected {n} entries")
        if self.sources.n != n:
            raise ParameterError("sources", f"expected {n} entries")
        if not self.dt > 0:
            raise ParameterError("dt", "must be > 0")
        if not self.t_end > 0:
            raise ParameterError("t_end", "must be > 0")
        if self.mode not in MODES:
            raise ParameterError("mode", f"must be one of {MODES}")
        if not self.tau_f > 0:
            raise ParameterError("tau_f", "must be > 0")
        if self.controller_rate < 0:
            raise ParameterError("controller_rate", "must be >= 0")
        if self.record_every < 1:
            raise ParameterError("record_every", "must be >= 1")
        for i, (v, d) in enumerate(zip(self.v_b, self.desd)):
            if not d.v_b_min <= v <= d.v_b_max:
                raise ParameterError(f"sst[{i}].v_b", "battery voltage outside [v_b_min, v_b_max]")

    @property
    def n(self) -> int:
        return self.topology.n

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


# -- trajectory -------------------------------------------------------------------

RECORD_FIELDS = STATE_FIELDS + ("I_b", "I_b_ref", "I_dab", "I_dab_star", "u_b", "phi_b",
                                "delta", "sat_flags", "I_pv", "I_w", "I_l")


@dataclass
class Trajectory:
    """Sampled run output: ``data[name]`` is ``(samples, n)``, ``t`` is ``(samples,)``."""

    t: np.ndarray
    data: dict[str, np.ndarray]
    log: list[dict] = field(default_factory=list)
    setpoints_initial: SetpointSet | None = None
    setpoints_final: SetpointSet | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[name]

    @property
    def n(self) -> int:
        return self.data["I_b"].shape[1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            cols = [self.data[c] for c in CSV_COLUMNS[2:]]
            for k, t in enumerate(self.t):
                for i in range(self.n):
                    row = [repr(float(t)), i + 1]
                    for name, c in zip(CSV_COLUMNS[2:], cols):
                        row.append(int(c[k, i]) if name == "sat_flags" else repr(float(c[k, i])))
                    w.writerow(row)

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


# -- simulator --------------------------------------------------------------------

def _storage_start(v_l, I_ref, v_b, desd: DesdParams):
    """Storage voltages in steady state delivering ``I_ref`` into the bus."""
    v_o = v_l + desd.r_o * I_ref
    disc = v_b ** 2 - 4 * desd.r_in * v_o * I_ref
    if np.any(disc < 0):
        raise ParameterError("v_b", "battery cannot deliver the initial storage current")
    return v_o, (v_b + np.sqrt(disc)) / 2


class Simulator:
    """Fixed-step integrator of one scenario.

    ``step`` advances one ``dt``; ``run`` integrates to ``t_end`` and returns
    the sampled ``Trajectory``. Sharing requests are evaluated every
    ``sharing.tick`` seconds and take effect ``sharing.delay`` later.
    ``backend="numba"`` integrates the stretches between events with the
    compiled kernel; ``"numpy"`` is the slower reference path.
    """

    def __init__(self, scenario: Scenario, y0: np.ndarray | None = None,
                 backend: str = "numba"):
        if backend not in ("numba", "numpy"):
            raise ValueError("backend must be 'numba' or 'numpy'")
        self.sc = scenario
        self.backend = backend
        n = scenario.n
        self.P = SstParams.stack(scenario.params)
        self.D = DesdParams.stack(scenario.desd)
        self.v_b = np.array(scenario.v_b)
        self.guard = default_guard(self.D)
        self.noise = scenario.sources.noise_table(scenario.seed, scenario.t_end)
        self._set_setpoints(scenario.setpoints)
        self.t = 0.0
        self.k = 0
        self.u_prev = np.zeros(n)
        self.u_hold = None
        self.log: list[dict] = []
        self.pending: tuple[int, SetpointSet, dict] | None = None
        self.infeasible = 0
        self.tick_steps = max(1, int(round(scenario.sharing.tick / scenario.dt)))
        self.ctrl_steps = (max(1, int(round(1.0 / (scenario.controller_rate * scenario.dt))))
                           if scenario.controller_rate > 0 else 0)
        self._source_steps = self._source_change_steps()
        self._update_sources()
        self.y = self.initial_state() if y0 is None else np.array(y0, dtype=float).reshape(n, NS)
        self.last_ok = np.clip(self.raw_ref(), -self.D.I_b_max, self.D.I_b_max)
        self.u_prev = self._aux(self.t, self.y)["u_b"]
        if backend == "numba":
            self._packed_static()

    # setpoints and sources
    def _set_setpoints(self, sps: SetpointSet) -> None:
        self.setpoints = sps
        self.S = sps.stacked()
        if self.backend == "numba":
            self.SP = _kernel.pack(self.S, _kernel.SP_COLS)

    def _source_change_steps(self) -> set[int]:
        # step indices around which the held source currents may change
        sc = self.sc
        times = [s.t for s in sc.sources.steps]
        if any(getattr(sc.sources, "noise_" + ch) > 0 for ch in SOURCE_CHANNELS):
            rows = int(np.ceil(sc.t_end / sc.sources.noise_hold)) + 1
            times += [r * sc.sources.noise_hold for r in range(rows)]
        out = set()
        for t in times:
            k = int(round(t / sc.dt))
            out.update((k - 1, k, k + 1))
        return out

    def _update_sources(self) -> None:
        sc = self.sc
        base = sc.sources.base_at(self.t)
        row = int(self.t / sc.sources.noise_hold + 1e-9)
        self.src = {ch: base[ch] + self.noise[ch][row] for ch in SOURCE_CHANNELS}
        self.net_src = self.src["I_pv"] + self.src["I_w"] - self.src["I_l"]

    def raw_ref(self) -> np.ndarray:
        """Storage reference current the DC grid asks for right now."""
        return self.S.i_dab - self.net_src

    def initial_state(self) -> np.ndarray:
        """Closed-loop equilibrium with every storage unit on its reference."""
        eq = find_equilibrium(self.P, self.S, self.sc.topology)
        I_ref = np.clip(self.raw_ref(), -self.D.I_b_max, self.D.I_b_max)
        v_l = eq.z[:, 4]
        v_o, v_in = _storage_start(v_l, I_ref, self.v_b, self.D)
        return np.column_stack([eq.z, v_o, v_in, I_ref])

    # right-hand side (reference implementation)
    def _pieces(self, t, y):
        z = y[:, :NZ]
        v_o, v_in, filt = y[:, NZ], y[:, NZ + 1], y[:, NZ + 2]
        D = self.D
        v_l = z[:, 4]
        I_b = (v_o - v_l) / D.r_o
        I_dab = kcl_current(self.src["I_pv"], self.src["I_w"], I_b, self.src["I_l"])
        raw = self.raw_ref()
        ref = np.clip(raw, -D.I_b_max, D.I_b_max)
        dfilt = (ref - filt) / self.sc.tau_f
        dz = feeder_rhs(z, t, self.sc.topology, self.P, self.S, I_dab, self.sc.mode, clamp=True)
        return z, v_o, v_in, filt, v_l, I_b, I_dab, raw, ref, dfilt, dz

    def _duty(self, v_o, v_in, v_l, filt, dfilt, phi_vl):
        fault = v_in <= self.guard
        safe_vin = np.where(fault, 1.0, v_in)
        u = linearizing_duty(v_o, safe_vin, v_l, filt, dfilt, phi_vl, self.D)
        return np.where(fault, self.u_prev, u), fault

    def rhs(self, t, y):
        """Time derivative of the ``(n, 12)`` state with the sources held."""
        z, v_o, v_in, filt, v_l, I_b, I_dab, raw, ref, dfilt, dz = self._pieces(t, y)
        if self.u_hold is not None:
            u = self.u_hold
        else:
            u, _ = self._duty(v_o, v_in, v_l, filt, dfilt, dz[:, 4])
        u_eff = np.clip(u, self.D.u_b_min, self.D.u_b_max)
        dv_o, dv_in = desd_rhs(_Desd(v_o, v_in), v_l, u_eff, self.v_b, self.D)
        return np.column_stack([dz, dv_o, dv_in, dfilt])

    def _aux(self, t, y) -> dict:
        z, v_o, v_in, filt, v_l, I_b, I_dab, raw, ref, dfilt, dz = self._pieces(t, y)
        if self.u_hold is not None:
            u, fault = self.u_hold, v_in <= self.guard
        else:
            u, fault = self._duty(v_o, v_in, v_l, filt, dfilt, dz[:, 4])
        phi_b, sat_b = phase_shift_from_duty(u, self.D)
        state = SstState.from_z(z)
        rect_sat = duty_cycles(state, self.P, self.S).saturated
        dab_sat = dab_phase_shift(state, self.P, self.S).saturated
        flags = (np.where(rect_sat, SAT_RECTIFIER, 0) | np.where(dab_sat, SAT_DAB, 0)
                 | np.where(sat_b, SAT_STORAGE_DUTY, 0)
                 | np.where(np.abs(raw) >= self.D.I_b_max, SAT_REFERENCE, 0)
                 | np.where(fault, SAT_GUARD, 0))
        return dict(I_b=I_b, I_b_ref=raw, I_dab=I_dab, I_dab_star=self.S.i_dab.copy(),
                    u_b=u, phi_b=phi_b, delta=I_b - raw, sat_flags=flags.astype(float),
                    **{ch: self.src[ch].copy() for ch in SOURCE_CHANNELS})

    # time stepping
    def _boundary(self) -> None:
        """Events due at the current step: ticks, sources, delayed setpoints, sampling."""
        sc = self.sc
        # the coordinator acts on the last measured reference, so a source
        # change landing on a tick is seen at the next tick
        if sc.sharing.enabled and self.k % self.tick_steps == 0 and self.k > 0:
            self._sharing_tick()
        self._update_sources()
        self._apply_pending()
        if self.ctrl_steps and self.k % self.ctrl_steps == 0:
            self.u_hold = None
            self.u_hold = self._aux(self.t, self.y)["u_b"]

    def _is_boundary(self, k: int) -> bool:
        return (k % self.tick_steps == 0 or k in self._source_steps
                or (self.ctrl_steps and k % self.ctrl_steps == 0)
                or (self.pending is not None and k == self.pending[0]))

    def step(self) -> None:
        """Advance one step: events, sharing tick, RK4 advance, divergence check."""
        self._boundary()
        self._advance(1)

    def _advance(self, nsteps: int) -> None:
        if self.backend == "numba":
            self._advance_kernel(nsteps)
            return
        dt = self.sc.dt
        for _ in range(nsteps):
            t, y = self.t, self.y
            k1 = self.rhs(t, y)
            k2 = self.rhs(t + dt / 2, y + dt / 2 * k1)
            k3 = self.rhs(t + dt / 2, y + dt / 2 * k2)
            k4 = self.rhs(t + dt, y + dt * k3)
            y_new = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            self._check(y_new, (self.k + 1) * dt)
            self.k += 1
            self.t = self.k * dt
            self.y = y_new
            if self.u_hold is None:
                v_o, v_in, filt = y[:, NZ], y[:, NZ + 1], y[:, NZ + 2]
                self.u_prev, _ = self._duty(v_o, v_in, y[:, 4], filt, k1[:, NZ + 2], k1[:, 4])

    def _packed_static(self) -> None:
        top = self.sc.topology
        self._PK = _kernel.pack(self.P, _kernel.SST_COLS)
        D = self.D
        self._DK = np.ascontiguousarray(np.column_stack(
            [np.asarray(D.C_o), D.r_o, D.C_in, D.r_in, D.I_b_max, D.kappa_p,
             D.u_b_min, D.u_b_max, self.guard]).astype(float))
        self._topo = (top.r, top.x, top.omegas, np.array(top.theta0, float),
                      float(top.v_g_d), float(top.v_g_q), top.coupling == "prefix-sum",
                      self.sc.mode == "full")

    def _advance_kernel(self, nsteps: int) -> None:
        hold = self.u_hold is not None
        u_hold = self.u_hold if hold else self.u_prev
        y = np.ascontiguousarray(self.y)
        u_prev = np.array(self.u_prev, dtype=float)
        bad = np.zeros(2, dtype=np.int64)
        done = _kernel.advance(y, self.k, nsteps, self.sc.dt, self._PK, self._DK, self.SP,
                               *self._topo, self.src["I_pv"], self.src["I_w"], self.src["I_l"],
                               self.v_b, self.sc.tau_f, u_prev, hold,
                               np.asarray(u_hold, float), bad)
        self.y, self.u_prev = y, u_prev
        self.k += done
        self.t = self.k * self.sc.dt
        if done < nsteps:
            t_bad = (self.k + 1) * self.sc.dt
            raise SimulationDiverged(t_bad, int(bad[0]), STATE_FIELDS[bad[1]], float("nan"))

    def _check(self, y, t) -> None:
        bad = ~(np.abs(y) <= 1e9)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise SimulationDiverged(t, int(i), STATE_FIELDS[j], float(y[i, j]))

    def _apply_pending(self) -> None:
        if self.pending is None or self.k < self.pending[0]:
            return
        _, sps, rec = self.pending
        self.pending = None
        self._set_setpoints(sps)
        self.log.append(dict(t=self.t, kind="applied", sst=rec["sst"], method=rec["method"]))

    def _sharing_tick(self) -> None:
        if self.pending is not None:
            return
        raw = self.raw_ref()
        sat = [detect_saturation(raw[i], self.D.I_b_max[i]) for i in range(self.sc.n)]
        for i in range(self.sc.n):
            if not sat[i]:
                self.last_ok[i] = raw[i]
        for m in range(self.sc.n):
            if not sat[m]:
                continue
            dP = float(-self.S.v_l[m] * (raw[m] - self.last_ok[m]))
            if dP == 0:
                continue
            pol = self.sc.sharing
            ev = SharingEvent(m, dP, pol.method, pol.delay)
            res = share(self.setpoints, self.sc.topology, list(self.sc.params), ev)
            rec = dict(t=self.t, kind="sharing", sst=m + 1, method=pol.method, delta_P=dP,
                       delay=pol.delay, outcome="reverted" if res.reverted else "scheduled",
                       reason=res.reason,
                       sources={str(k + 1): v for k, v in res.sources.items()},
                       before=_setpoint_records(self.setpoints),
                       after=_setpoint_records(res.setpoints))
            self.log.append(rec)
            if res.reverted:
                self.infeasible += 1
                continue
            apply_k = self.k + int(round(pol.delay / self.sc.dt))
            self.pending = (apply_k, res.setpoints, rec)
            if apply_k == self.k:
                self._apply_pending()
            return

    def run(self, progress: Callable[[float], None] | None = None) -> Trajectory:
        """Integrate from the current state to ``t_end`` and sample every
        ``record_every`` steps."""
        sc = self.sc
        steps = int(round(sc.t_end / sc.dt))
        every = sc.record_every
        names_state = list(enumerate(STATE_FIELDS))
        rows_t, rows = [], {name: [] for name in RECORD_FIELDS}
        initial = self.setpoints
        while True:
            self._boundary()
            if self.k % every == 0 or self.k == steps:
                aux = self._aux(self.t, self.y)
                rows_t.append(self.t)
                for j, name in names_state:
                    rows[name].append(self.y[:, j].copy())
                for name, val in aux.items():
                    rows[name].append(np.asarray(val, float))
                if progress is not None:
                    progress(self.t)
            if self.k >= steps:
                break
            nxt = self.k + 1
            while nxt < steps and nxt % every and not self._is_boundary(nxt):
                nxt += 1
            self._advance(nxt - self.k)
        return Trajectory(np.array(rows_t), {k: np.array(v) for k, v in rows.items()},
                          self.log, initial, self.setpoints)


@dataclass
class _Desd:
    v_o: np.ndarray
    v_in: np.ndarray


def _setpoint_records(sps: SetpointSet) -> list[dict]:
    keys = ("p_rec", "i_d", "i_q", "v_d", "v_q", "i_dab")
    return [dict(sst=i + 1, **{k: float(getattr(s, k)) for k in keys}) for i, s in enumerate(sps)]


def run(scenario: Scenario) -> Trajectory:
    return Simulator(scenario).run()


# -- isolated storage unit ----------------------------------------------------------

@dataclass
class DesdRun:
    t: np.ndarray
    v_o: np.ndarray
    v_in: np.ndarray
    I_b: np.ndarray
    I_b_ref: np.ndarray
    u_b: np.ndarray
    p: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        return self.I_b - self.I_b_ref


def simulate_desd(params: DesdParams, v_o0, v_in0, dt: float, steps: int,
                  I_ref: Callable = lambda t: 0.0, dI_ref: Callable = lambda t: 0.0,
                  v_l: Callable = lambda t: 400.0, dv_l: Callable = lambda t: 0.0,
                  v_b: Callable = lambda t: None, clip: bool = True) -> DesdRun:
    """Storage converter under the linearizing law with exact reference and bus signals.

    ``v_o0`` and ``v_in0`` may be arrays to run several starts at once; the
    outputs then have one column per start. ``v_b(t)`` defaults to the middle
    of the battery band. With ``clip`` the duty is limited to the converter's
    achievable range.
    """
    p = params
    vb_mid = 0.5 * (p.v_b_min + p.v_b_max)
    scalar = np.ndim(v_o0) == 0 and np.ndim(v_in0) == 0
    y = np.array(np.broadcast_arrays(np.asarray(v_o0, float), np.asarray(v_in0, float)),
                 dtype=float).reshape(2, -1)

    def duty(t, y):
        u = linearizing_duty(y[0], y[1], v_l(t), I_ref(t), dI_ref(t), dv_l(t), p)
        return np.clip(u, p.u_b_min, p.u_b_max) if clip else u

    def f(t, y):
        vb = v_b(t)
        vb = vb_mid if vb is None else vb
        return np.array(desd_rhs(_Desd(y[0], y[1]), v_l(t), duty(t, y), vb, p))

    m = y.shape[1]
    t_out = np.arange(steps + 1) * dt
    cols = {k: np.empty((steps + 1, m)) for k in ("v_o", "v_in", "I_b", "I_b_ref", "u_b")}
    for k in range(steps + 1):
        t = k * dt
        vl = v_l(t)
        cols["v_o"][k], cols["v_in"][k] = y
        cols["I_b"][k] = (y[0] - vl) / p.r_o
        cols["I_b_ref"][k] = I_ref(t)
        cols["u_b"][k] = duty(t, y)
        if k == steps:
            break
        k1 = f(t, y)
        k2 = f(t + dt / 2, y + dt / 2 * k1)
        k3 = f(t + dt / 2, y + dt / 2 * k2)
        k4 = f(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if scalar:
        cols = {k: v[:, 0] for k, v in cols.items()}
    return DesdRun(t_out, cols["v_o"], cols["v_in"], cols["I_b"], cols["I_b_ref"],
                   cols["u_b"], cols["v_o"] * cols["v_in"] * cols["u_b"])
