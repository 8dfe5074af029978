"""Command-line front end.

    sstnet run      --scenario fig7_sharing --out runs/fig7
    sstnet analyze  --scenario ieee34_9sst --analysis eigen,envelope
    sstnet sweep    --scenario a.scn b.scn --out runs/sweep --seeds 0,1,2
    sstnet validate --scenario my.scn

Exit codes: 0 ok, 2 config error, 3 divergence, 4 some sharing requests were
infeasible (run completed under the previous setpoints).
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .powershare import METHODS
from .report import PLOT_SCRIPT, stability_report, summary
from .scenario import PRESETS, ConfigError, read_scenario, serialize_scenario
from .simengine import SimulationDiverged, Simulator
from .stability import EquilibriumError

log = logging.getLogger("sstnet")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INFEASIBLE = 0, 2, 3, 4
ANALYSES = ("eigen", "envelope")


def _analyses(text: str | None) -> set[str]:
    if not text:
        return set()
    chosen = {a.strip() for a in text.split(",") if a.strip()}
    bad = chosen - set(ANALYSES)
    if bad:
        raise ConfigError("--analysis", f"unknown analysis {sorted(bad)}; choose from {ANALYSES}")
    return chosen


def _load(args):
    sc = read_scenario(args.scenario)
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "t_end", None) is not None:
        changes["t_end"] = args.t_end
    if getattr(args, "method", None):
        import dataclasses
        changes["sharing"] = dataclasses.replace(sc.sharing, method=args.method)
    return sc.replace(**changes) if changes else sc


def run_scenario(sc, out: Path, analyses: set[str] = frozenset()) -> int:
    """Simulate ``sc`` and write all artifacts to ``out``; returns an exit code."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.scn").write_text(serialize_scenario(sc))
    (out / "plot_storage.py").write_text(PLOT_SCRIPT)
    if analyses:
        (out / "stability.txt").write_text(
            stability_report(sc, "eigen" in analyses, "envelope" in analyses))
    sim = Simulator(sc)
    try:
        traj = sim.run()
    except SimulationDiverged as exc:
        with open(out / "setpoints.jsonl", "w") as fh:
            import json
            for rec in sim.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        (out / "summary.txt").write_text(f"diverged: {exc}\n")
        log.error("%s", exc)
        return EXIT_DIVERGED
    traj.write_csv(out / "trajectory.csv")
    traj.write_log(out / "setpoints.jsonl")
    (out / "summary.txt").write_text(summary(sc, traj, envelopes="envelope" in analyses))
    if sim.infeasible:
        log.warning("%d sharing request(s) infeasible; previous setpoints kept", sim.infeasible)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _load(args)
    out = Path(args.out)
    code = run_scenario(sc, out, _analyses(args.analysis))
    print((out / "summary.txt").read_text(), end="")
    return code


def cmd_analyze(args) -> int:
    sc = _load(args)
    chosen = _analyses(args.analysis or ",".join(ANALYSES))
    text = stability_report(sc, "eigen" in chosen, "envelope" in chosen, args.p_max)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "stability.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def _sweep_one(job):
    ref, seed, out, analyses = job
    sc = read_scenario(ref)
    if seed is not None:
        sc = sc.replace(seed=seed)
    return ref, seed, run_scenario(sc, Path(out), analyses)


def cmd_sweep(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [None]
    analyses = _analyses(args.analysis)
    for ref in args.scenario:
        read_scenario(ref)          # fail fast on config errors
    jobs = []
    for ref in args.scenario:
        stem = Path(ref).stem if Path(ref).is_file() else ref.replace("preset:", "")
        for seed in seeds:
            sub = stem if seed is None else f"{stem}_seed{seed}"
            jobs.append((ref, seed, str(Path(args.out) / sub), analyses))
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(_sweep_one, jobs))
    worst = EXIT_OK
    for ref, seed, code in results:
        print(f"{ref} seed={seed}: exit {code}")
        worst = max(worst, code)
    return worst


def cmd_validate(args) -> int:
    sc = read_scenario(args.scenario)
    print(f"ok: {sc.name or args.scenario}, {sc.n} SSTs, t_end {sc.t_end:g} s, "
          f"{len(sc.sources.steps)} load steps")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sstnet", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    scen_help = f"scenario file (TOML or .json) or preset name: {', '.join(PRESETS)}"

    r = sub.add_parser("run", help="simulate a scenario and write artifacts")
    r.add_argument("--scenario", required=True, help=scen_help)
    r.add_argument("--out", default="out", help="output directory")
    r.add_argument("--mode", choices=("full", "fundamental"))
    r.add_argument("--seed", type=int)
    r.add_argument("--t-end", type=float, dest="t_end")
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--analysis", help="comma list of: eigen, envelope")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="eigenvalue and envelope analysis without simulating")
    a.add_argument("--scenario", required=True, help=scen_help)
    a.add_argument("--out")
    a.add_argument("--analysis", help="comma list of: eigen, envelope (default both)")
    a.add_argument("--p-max", type=float, dest="p_max",
                   help="storage power bound for the envelopes (W)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="run several scenarios or seeds in parallel")
    s.add_argument("--scenario", required=True, nargs="+", help=scen_help)
    s.add_argument("--out", default="sweep")
    s.add_argument("--seeds", help="comma list of seeds")
    s.add_argument("--workers", type=int)
    s.add_argument("--analysis")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="parse and validate a scenario")
    v.add_argument("--scenario", required=True, help=scen_help)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EquilibriumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
