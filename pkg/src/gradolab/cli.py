"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 invalid configuration, 3 numerical
failure (including any failed sweep row; the tables are still written) or
an unwritable output directory.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .model import ConfigError
from .ode import IntegrationError, integrate
from .plot import PlotSpec, render_plot, sweep_columns
from .rtm import NewtonFailure, RtmFailure, rtm_integrate
from .stability import (
    EigenError,
    EquilibriumError,
    network_equilibrium,
    single_species_equilibria,
    two_species_equilibria,
)
from .sweeps import SCENARIO_NAMES, SweepOptions, ode_steady_state, scenario, sweep_cells, sweep_flow

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
NUMERIC_ERRORS = (IntegrationError, RtmFailure, NewtonFailure, EquilibriumError, EigenError, FloatingPointError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gradolab", description="Chemostat chains: ODE reference vs. implicit log-concentration transport.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="integrate one configuration over time")
    s.add_argument("--config", required=True)
    s.add_argument("--engine", choices=("ode", "rtm"), required=True)
    s.add_argument("--t-end", type=float, help="seconds (default: the engine's horizon)")
    s.add_argument("--out", required=True)

    e = sub.add_parser("equilibria", help="equilibria, spectra and stability of a configuration")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)

    q = sub.add_parser("sweep-q", help="both engines over a grid of flow rates (l/s)")
    q.add_argument("--config", required=True)
    q.add_argument("--q-min", type=float, required=True)
    q.add_argument("--q-max", type=float, required=True)
    q.add_argument("--points", type=int, required=True)
    q.add_argument("--log", action="store_true", help="log-spaced grid")
    q.add_argument("--out", required=True)

    c = sub.add_parser("sweep-cells", help="both engines over cell counts with the volume split evenly")
    c.add_argument("--config", required=True)
    c.add_argument("--n-min", type=int, required=True)
    c.add_argument("--n-max", type=int, required=True)
    c.add_argument("--out", required=True)

    sc = sub.add_parser("scenario", help="run a preset study end to end")
    sc.add_argument("--name", required=True, choices=SCENARIO_NAMES)
    sc.add_argument("--out", required=True)
    return p


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sweep_outputs(table, out: Path, stem: str, x_label: str, log_x: bool) -> list[Path]:
    files = [io.write_csv(table, out / f"sweep_{stem}.csv")]
    if not any(math.isfinite(d) for r in table.rows for d in r.delta):
        print("no finite engine gap to plot; skipping the figure", file=sys.stderr)
        return files
    spec = PlotSpec("param", ("delta_input", "delta_output"), log_x=log_x,
                    title=f"engine gap vs {x_label}", x_label=x_label, y_label="|S_rtm - S_ode| (mol/l)")
    svg = out / f"delta_{stem}.svg"
    svg.write_text(render_plot(sweep_columns(table), spec), encoding="utf-8")
    files.append(svg)
    return files


def _report_failures(table) -> bool:
    bad = False
    for r in table.rows:
        for tag, run in (("ode", r.ode), ("rtm", r.rtm)):
            if run.error:
                bad = True
                print(f"row {r.param!r} {tag}: {run.error}", file=sys.stderr)
    return bad


def _cmd_simulate(args, parsed):
    out = _outdir(args.out)
    cfg = parsed.network
    if args.t_end is not None and not args.t_end > 0:
        raise _UsageError("--t-end must be positive")
    if args.engine == "ode":
        traj = integrate(cfg, parsed.ode, args.t_end)
    else:
        traj, _ = rtm_integrate(cfg, parsed.rtm, args.t_end)
    names = [sp.name for sp in cfg.species]
    files = [io.write_trajectory_csv(traj, names, out / "trajectory.csv")]
    cols = {"time": [s.time for s in traj], "S_out": [float(s.S[-1]) for s in traj]}
    for j, n in enumerate(names):
        cols[f"B_{n}_out"] = [float(s.B[-1, j]) for s in traj]
    svg = out / "trajectory.svg"
    svg.write_text(render_plot(cols, PlotSpec("time", tuple(k for k in cols if k != "time"),
                                              title=f"{args.engine}: last reactor", x_label="time (s)")), encoding="utf-8")
    files.append(svg)
    return files, False


def _cmd_equilibria(args, parsed):
    out = _outdir(args.out)
    cfg = parsed.network
    if cfg.n_reactors == 1 and cfg.n_species == 1:
        reports = single_species_equilibria(cfg)
    elif cfg.n_reactors == 1 and cfg.n_species == 2:
        reports = two_species_equilibria(cfg)
    else:
        seed = ode_steady_state(cfg, parsed.ode).state
        reports = [network_equilibrium(cfg, seed)]
    path = out / "equilibria.csv"
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "merged", "stability", "margin", "state", "eigenvalues"])
        for r in reports:
            state = " ".join(repr(v) for v in r.point.state)
            eig = " ".join(f"{z.real!r}{z.imag:+.17g}j" for z in r.spectrum.eigenvalues)
            w.writerow([r.point.label, "true" if r.point.merged else "false", r.stability.kind, repr(r.stability.margin), state, eig])
            print(f"{r.point.label}: {r.stability.kind} at {state}")
    return [path], False


def _cmd_sweep_q(args, parsed):
    if args.points < 1 or not (0 < args.q_min <= args.q_max):
        raise _UsageError("need --points >= 1 and 0 < --q-min <= --q-max")
    grid = (np.geomspace if args.log else np.linspace)(args.q_min, args.q_max, args.points)
    table = sweep_flow(parsed.network, [float(q) for q in grid], SweepOptions(parsed.ode, parsed.rtm))
    return _sweep_outputs(table, _outdir(args.out), "q", "Q (l/s)", args.log), _report_failures(table)


def _cmd_sweep_cells(args, parsed):
    if not (3 <= args.n_min <= args.n_max):
        raise _UsageError("need 3 <= --n-min <= --n-max")
    table = sweep_cells(parsed.network, range(args.n_min, args.n_max + 1), SweepOptions(parsed.ode, parsed.rtm))
    return _sweep_outputs(table, _outdir(args.out), "cells", "cells n", False), _report_failures(table)


def _cmd_scenario(args):
    sc = scenario(args.name)
    out = _outdir(args.out)
    parsed = io.ParsedConfig(sc.config, sc.options.ode, sc.options.rtm)
    cfg_path = out / "config.json"
    cfg_path.write_text(io.dump_config(parsed), encoding="utf-8")
    table = sc.run()
    if sc.sweep == "cells":
        files = _sweep_outputs(table, out, "cells", "cells n", False)
    else:
        files = _sweep_outputs(table, out, "q", "Q (l/s)", True)
    if len(table.rows) == 1:
        row = table.rows[0]
        cols = {"cell": [k + 1 for k in row.cells]}
        for tag, run in (("ode", row.ode), ("rtm", row.rtm)):
            if run.state is None:
                continue
            for j, n in enumerate(table.species):
                cols[f"B_{n}_{tag}"] = [float(run.state.B[k, j]) for k in row.cells]
        if len(cols) > 1:
            svg = out / "biomass_cells.svg"
            svg.write_text(render_plot(cols, PlotSpec("cell", tuple(k for k in cols if k != "cell"),
                                                      title=f"scenario {sc.name}: steady biomass", x_label="reactor")), encoding="utf-8")
            files.append(svg)
    return [cfg_path] + files, _report_failures(table), parsed


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    t0 = time.perf_counter()
    try:
        if args.command == "scenario":
            files, failed, cfg = _cmd_scenario(args)
            digest = io.config_digest(cfg)
        else:
            parsed = io.load_config(args.config)
            digest = io.config_digest(parsed)
            handler = {
                "simulate": _cmd_simulate,
                "equilibria": _cmd_equilibria,
                "sweep-q": _cmd_sweep_q,
                "sweep-cells": _cmd_sweep_cells,
            }[args.command]
            files, failed = handler(args, parsed)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gradolab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        for e in exc.errors:
            print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"gradolab: cannot write output: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest = io.RunManifest(io.__version__, digest, ["gradolab", *argv], time.perf_counter() - t0,
                              [p.name for p in files])
    manifest.write(Path(args.out) / "manifest.json")
    return EXIT_NUMERIC if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
