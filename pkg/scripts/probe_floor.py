"""How the inflow biomass seed shapes the transport solver near washout.

For one tank just above the washout flow, the only steady biomass the
log-variable solver can hold is the inflow seed amplified by
``D / (D - mu(S))``. This prints the solver's value next to that quadratic
root for several seeds and flows, and the flow at which the tank first
counts as washed out.

    python scripts/probe_floor.py
"""
import numpy as np

from gradolab.model import MonodKinetics, Species, make_network
from gradolab.rtm import RtmOptions, rtm_run_to_steady
from gradolab.sweeps import EXTINCTION_THRESHOLD

V, S_IN, MU_MAX, K_S = 1 / 3, 3.0, 4e-5, 1.0
Q_STAR = V * MU_MAX * S_IN / (K_S + S_IN)
FACTORS = (0.99, 1 + 1e-5, 1 + 1e-4, 1 + 5e-4, 1 + 2e-3, 1 + 1e-2, 1 + 1e-1)
SEEDS = (1e-15, 1e-12, 1e-9, 1e-6)


def seeded_biomass(q, seed):
    D = q / V
    roots = np.roots([MU_MAX - D, D * (K_S + S_IN) - MU_MAX * S_IN + D * seed, -D * seed * (K_S + S_IN)])
    return min(r.real for r in roots if r.real > 0 and r.imag == 0)


def main():
    sp = Species("b", MonodKinetics(MU_MAX, K_S))
    print(f"washout flow Q* = {Q_STAR:.6g} l/s")
    for seed in SEEDS:
        opts = RtmOptions(inflow_biomass=seed, dt_max=1e9, t_max=1e14, ss_tol=1e-22)
        first = None
        print(f"seed {seed:g}")
        for f in FACTORS:
            q = Q_STAR * f
            cfg = make_network([V], q, S_IN, [sp], (5.0, [2.0]))
            ss, diag = rtm_run_to_steady(cfg, opts)
            b = float(ss.state.B[0, 0])
            want = seeded_biomass(q, seed) if f > 1 else float("nan")
            print(f"  Q/Q* = {f:<9.6g} B = {b:<12.4g} seed root = {want:<12.4g} steps = {diag.steps_taken}")
            if first is None and b < EXTINCTION_THRESHOLD:
                first = f
        print(f"  first washed-out Q/Q*: {first}")


if __name__ == "__main__":
    main()
