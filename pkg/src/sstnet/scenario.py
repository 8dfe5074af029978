"""Scenario files: TOML (or JSON) text to ``Scenario`` and back.

SST numbers in files are 1-based. A file may give per-SST values directly
in each ``[[sst]]`` table or once under ``[defaults.*]``; explicit values win.
Every error names the offending key, e.g. ``sst[3].params.C_f``.
"""

from __future__ import annotations

import dataclasses
import json
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .netmodel import (DesdParams, FeederTopology, IEEE34_LINES, ParameterError, SstParams,
                       dispatch_setpoints)
from .simengine import LoadStep, Scenario, SharingPolicy, SourceProfiles

PRESETS = ("ieee34_9sst", "fig7_sharing", "fig8_delay")

SETPOINT_KEYS = ("p_rec", "v_f", "v_l", "i_q", "p_rec_max")
SOURCE_KEYS = ("I_pv", "I_w", "I_l", "v_b")
SST_KEYS = set(SETPOINT_KEYS) | set(SOURCE_KEYS) | {"params", "desd"}
TOP_KEYS = {"name", "t_end", "dt", "mode", "seed", "tau_f", "controller_rate", "record_every",
            "feeder", "defaults", "sst", "step", "sources", "sharing"}
FEEDER_KEYS = {"v_g_d", "v_g_q", "frequency", "theta0", "coupling", "lines"}
NOISE_KEYS = {"noise_I_pv", "noise_I_w", "noise_I_l", "noise_hold"}
STEP_KEYS = {"t", "sst", "I_pv", "I_w", "I_l"}
SHARING_KEYS = {f.name for f in dataclasses.fields(SharingPolicy)}
PARAM_KEYS = {f.name for f in dataclasses.fields(SstParams)}
DESD_KEYS = {f.name for f in dataclasses.fields(DesdParams)}


class ConfigError(ValueError):
    """Malformed or invalid scenario text; ``key`` locates the problem."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


def _check_keys(table, allowed, where):
    if not isinstance(table, dict):
        raise ConfigError(where, "expected a table")
    for k in table:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}" if where else k, "unknown key")


def _num(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    return float(value)


def _build(cls, values: dict, where: str):
    try:
        return cls(**{k: _num(v, f"{where}.{k}") for k, v in values.items()})
    except ParameterError as exc:
        raise ConfigError(f"{where}.{exc.key}", str(exc).split(": ", 1)[-1]) from None


def load_text(text: str, fmt: str = "toml") -> dict:
    """Parse scenario text into its raw table form."""
    try:
        if fmt == "json":
            return json.loads(text)
        return tomli.loads(text)
    except (tomli.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError("", f"syntax error: {exc}") from None


def parse_scenario(text: str, fmt: str = "toml") -> Scenario:
    """Validated ``Scenario`` from TOML (default) or JSON text."""
    return from_dict(load_text(text, fmt))


def from_dict(doc: dict) -> Scenario:
    _check_keys(doc, TOP_KEYS, "")
    feeder = doc.get("feeder", {})
    _check_keys(feeder, FEEDER_KEYS, "feeder")
    defaults = doc.get("defaults", {})
    _check_keys(defaults, {"params", "desd", "sst"}, "defaults")
    _check_keys(defaults.get("params", {}), PARAM_KEYS, "defaults.params")
    _check_keys(defaults.get("desd", {}), DESD_KEYS, "defaults.desd")
    _check_keys(defaults.get("sst", {}), set(SETPOINT_KEYS) | set(SOURCE_KEYS), "defaults.sst")

    ssts = doc.get("sst")
    if not isinstance(ssts, list) or not ssts:
        raise ConfigError("sst", "at least one [[sst]] table is required")
    n = len(ssts)
    lines = feeder.get("lines", [list(z) for z in IEEE34_LINES[:n]])
    if not isinstance(lines, list) or len(lines) != n:
        raise ConfigError("feeder.lines", f"expected {n} [r, x] pairs, one per SST")
    for k, z in enumerate(lines):
        if not isinstance(z, list) or len(z) != 2:
            raise ConfigError(f"feeder.lines[{k}]", "expected [r, x]")
        _num(z[0], f"feeder.lines[{k}]"), _num(z[1], f"feeder.lines[{k}]")

    freq = feeder.get("frequency", 60.0)
    omega = (2 * np.pi * _num(freq, "feeder.frequency") if not isinstance(freq, list)
             else tuple(2 * np.pi * _num(f, f"feeder.frequency[{k}]") for k, f in enumerate(freq)))
    try:
        topology = FeederTopology(
            lines=tuple(tuple(z) for z in lines),
            v_g_d=_num(feeder.get("v_g_d", 7200.0), "feeder.v_g_d"),
            v_g_q=_num(feeder.get("v_g_q", 0.0), "feeder.v_g_q"),
            omega=omega,
            theta0=(None if "theta0" not in feeder
                    else tuple(_num(v, "feeder.theta0") for v in feeder["theta0"])),
            coupling=feeder.get("coupling", "as-written"))
    except ParameterError as exc:
        raise ConfigError(f"feeder.{exc.key}", str(exc).split(": ", 1)[-1]) from None

    params, desd, per = [], [], {k: [] for k in SETPOINT_KEYS + SOURCE_KEYS}
    need = {"p_rec", "v_f", "v_l", "I_pv", "I_w", "I_l"}
    fallback = {"i_q": 0.0, "p_rec_max": float("inf"), "v_b": None}
    for i, raw in enumerate(ssts):
        where = f"sst[{i + 1}]"
        _check_keys(raw, SST_KEYS, where)
        p_over = raw.get("params", {})
        d_over = raw.get("desd", {})
        _check_keys(p_over, PARAM_KEYS, f"{where}.params")
        _check_keys(d_over, DESD_KEYS, f"{where}.desd")
        params.append(_build(SstParams, {**defaults.get("params", {}), **p_over}, f"{where}.params"))
        desd.append(_build(DesdParams, {**defaults.get("desd", {}), **d_over}, f"{where}.desd"))
        for k in SETPOINT_KEYS + SOURCE_KEYS:
            if k in raw:
                v = raw[k]
            elif k in defaults.get("sst", {}):
                v = defaults["sst"][k]
            elif k in need:
                raise ConfigError(f"{where}.{k}", "missing value")
            else:
                v = fallback[k]
            if k == "v_b" and v is None:
                v = 0.5 * (desd[-1].v_b_min + desd[-1].v_b_max)
            per[k].append(_num(v, f"{where}.{k}"))

    for i, v in enumerate(per["v_l"]):
        if not v > 0:
            raise ConfigError(f"sst[{i + 1}].v_l", "low-voltage setpoint must be > 0")
    try:
        setpoints = dispatch_setpoints(topology, params, per["p_rec"], per["v_f"], per["v_l"],
                                       per["i_q"], per["p_rec_max"])
    except ParameterError as exc:
        raise ConfigError(f"sst.{exc.key}", str(exc).split(": ", 1)[-1]) from None

    src = doc.get("sources", {})
    _check_keys(src, NOISE_KEYS, "sources")
    steps = []
    raw_steps = doc.get("step", [])
    if not isinstance(raw_steps, list):
        raise ConfigError("step", "expected an array of [[step]] tables")
    for k, st in enumerate(raw_steps):
        where = f"step[{k + 1}]"
        _check_keys(st, STEP_KEYS, where)
        if "t" not in st or "sst" not in st:
            raise ConfigError(where, "needs t and sst")
        idx = st["sst"]
        if isinstance(idx, bool) or not isinstance(idx, int) or not 1 <= idx <= n:
            raise ConfigError(f"{where}.sst", f"expected an SST number in 1..{n}")
        t = _num(st["t"], f"{where}.t")
        if t < 0 or (steps and t < steps[-1].t):
            raise ConfigError(f"{where}.t", "steps must be time-ordered and >= 0")
        steps.append(LoadStep(t, idx - 1,
                              **{c: _num(st.get(c, 0.0), f"{where}.{c}")
                                 for c in ("I_pv", "I_w", "I_l")}))
    try:
        sources = SourceProfiles(tuple(per["I_pv"]), tuple(per["I_w"]), tuple(per["I_l"]),
                                 tuple(steps),
                                 **{k: _num(v, f"sources.{k}") for k, v in src.items()})
    except ParameterError as exc:
        raise ConfigError(exc.key, str(exc).split(": ", 1)[-1]) from None

    sh = doc.get("sharing", {})
    _check_keys(sh, SHARING_KEYS, "sharing")
    try:
        sharing = SharingPolicy(
            method=sh.get("method", "constant-current"),
            tick=_num(sh.get("tick", 0.01), "sharing.tick"),
            delay=_num(sh.get("delay", 0.0), "sharing.delay"),
            enabled=bool(sh.get("enabled", True)))
    except ParameterError as exc:
        raise ConfigError(exc.key, str(exc).split(": ", 1)[-1]) from None

    for key in ("seed", "record_every"):
        if key in doc and (isinstance(doc[key], bool) or not isinstance(doc[key], int)):
            raise ConfigError(key, "expected an integer")
    if "t_end" not in doc:
        raise ConfigError("t_end", "missing value")
    try:
        return Scenario(
            topology=topology, params=tuple(params), desd=tuple(desd), setpoints=setpoints,
            sources=sources, v_b=tuple(per["v_b"]),
            t_end=_num(doc["t_end"], "t_end"), dt=_num(doc.get("dt", 1e-5), "dt"),
            mode=doc.get("mode", "fundamental"), seed=doc.get("seed", 0), sharing=sharing,
            tau_f=_num(doc.get("tau_f", 1e-3), "tau_f"),
            controller_rate=_num(doc.get("controller_rate", 0.0), "controller_rate"),
            record_every=doc.get("record_every", 100), name=str(doc.get("name", "")))
    except ParameterError as exc:
        key = exc.key
        if key.startswith("sst[") and "]" in key:
            i = int(key[4:key.index("]")])
            key = f"sst[{i + 1}]" + key[key.index("]") + 1:]
        raise ConfigError(key, str(exc).split(": ", 1)[-1]) from None


def to_dict(sc: Scenario) -> dict:
    """Fully explicit table form; ``from_dict(to_dict(sc)) == sc``."""
    top = sc.topology
    freqs = top.omegas / (2 * np.pi)
    feeder = dict(v_g_d=top.v_g_d, v_g_q=top.v_g_q,
                  frequency=(float(freqs[0]) if np.ndim(top.omega) == 0
                             else [float(f) for f in freqs]),
                  theta0=list(top.theta0), coupling=top.coupling,
                  lines=[list(z) for z in top.lines])
    ssts = []
    for i in range(sc.n):
        sp = sc.setpoints[i]
        entry = {k: float(getattr(sp, k)) for k in SETPOINT_KEYS}
        if np.isinf(entry["p_rec_max"]):
            del entry["p_rec_max"]
        entry.update(I_pv=sc.sources.I_pv[i], I_w=sc.sources.I_w[i], I_l=sc.sources.I_l[i],
                     v_b=sc.v_b[i], params=sc.params[i].to_dict(), desd=sc.desd[i].to_dict())
        ssts.append(entry)
    steps = [dict(t=s.t, sst=s.sst + 1, I_pv=s.I_pv, I_w=s.I_w, I_l=s.I_l)
             for s in sc.sources.steps]
    src = sc.sources
    doc = dict(name=sc.name, t_end=sc.t_end, dt=sc.dt, mode=sc.mode, seed=int(sc.seed),
               tau_f=sc.tau_f, controller_rate=sc.controller_rate,
               record_every=int(sc.record_every), feeder=feeder,
               sources=dict(noise_I_pv=src.noise_I_pv, noise_I_w=src.noise_I_w,
                            noise_I_l=src.noise_I_l, noise_hold=src.noise_hold),
               sharing=dataclasses.asdict(sc.sharing), sst=ssts)
    if steps:
        doc["step"] = steps
    return doc


def serialize_scenario(sc: Scenario, fmt: str = "toml") -> str:
    doc = to_dict(sc)
    if fmt == "json":
        return json.dumps(doc, indent=2)
    return tomli_w.dumps(doc)


def preset_path(name: str):
    return resources.files("sstnet") / "presets" / f"{name}.scn"


def read_scenario(ref: str) -> Scenario:
    """Load a scenario from a path or a bundled preset name.

    Files ending in ``.json`` are read as JSON, anything else as TOML.
    """
    path = Path(ref)
    if path.is_file():
        fmt = "json" if path.suffix == ".json" else "toml"
        return parse_scenario(path.read_text(), fmt)
    name = ref[len("preset:"):] if ref.startswith("preset:") else ref
    if name.endswith(".scn"):
        name = name[:-4]
    if name in PRESETS:
        return parse_scenario(preset_path(name).read_text())
    raise ConfigError("scenario", f"no such file or preset: {ref}")
