"""Run one or more preset scenarios and print what each one shows.

    python scripts/run_scenario.py A C --out runs/

Tables and figures go to ``<out>/<name>/`` through the same writers as the
command-line tool.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from gradolab import io
from gradolab.plot import PlotSpec, render_plot, sweep_columns
from gradolab.stability import break_even
from gradolab.sweeps import scenario


def flow_switch(table, cell=0):
    """Last and first grid values around each change of the ODE outcome."""
    out = []
    for a, b in zip(table.rows, table.rows[1:]):
        if a.ode.outcomes and b.ode.outcomes and a.ode.outcomes[cell] != b.ode.outcomes[cell]:
            out.append((a.param, b.param, str(a.ode.outcomes[cell]), str(b.ode.outcomes[cell])))
    return out


def summarize(name, table):
    qs = table.params
    failed = sum(r.failed for r in table.rows)
    print(f"  rows: {len(table.rows)}  failed: {failed}")
    for lo, hi, x, y in flow_switch(table):
        print(f"  ODE input cell: {x} at {lo:.6g} -> {y} at {hi:.6g}")
    d_out = table.column("output", "delta")
    if np.isfinite(d_out).any():
        k = int(np.nanargmax(d_out))
        print(f"  max output-cell delta {d_out[k]:.4g} at {qs[k]:.6g}")
    if name == "C":
        sc = scenario("C")
        D = 2e-4 / sc.config.reactors[0].volume
        lams = [break_even(sp.kinetics, D) for sp in sc.config.species]
        print(f"  break-even at Q=2e-4: {lams}")
    if name == "D":
        row = table.rows[0]
        for tag, run in (("ode", row.ode), ("rtm", row.rtm)):
            if run.state is None:
                continue
            labels = [str(o) for o in run.outcomes]
            print(f"  {tag}: tanks 1-3 {labels[:3]}, tanks 4-20 {sorted(set(labels[3:]))}")
            print(f"       species 1 in tank 4: {run.state.B[3, 0]:.6g}")
    rtm_outcomes = {str(o) for r in table.rows for o in r.rtm.outcomes}
    print(f"  RTM outcomes seen: {sorted(rtm_outcomes)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="+", choices=["A", "B", "C", "D"])
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()
    for name in args.names:
        sc = scenario(name)
        out = Path(args.out) / name
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        table = sc.run()
        print(f"scenario {name}: {time.perf_counter() - t0:.1f} s")
        stem = "cells" if sc.sweep == "cells" else "q"
        io.write_csv(table, out / f"sweep_{stem}.csv")
        if len(table.rows) > 1:
            spec = PlotSpec("param", ("delta_input", "delta_output"), log_x=stem == "q",
                            title=f"scenario {name}", x_label="cells n" if stem == "cells" else "Q (l/s)")
            (out / f"delta_{stem}.svg").write_text(render_plot(sweep_columns(table), spec))
        summarize(name, table)


if __name__ == "__main__":
    main()
