"""Why the transport solver keeps biomass alive in long washed-out chains.

Once every tank is past washout the exact model has no biomass anywhere.
The transport solver feeds each tank a small biomass seed, and each tank
multiplies what it receives by ``D / (D - mu(S_in))``. After enough tanks
the product exceeds the substrate supply and the tail of the chain grows a
population that consumes the substrate down to the floor.

    python scripts/chain_seed_amplification.py [n ...]
"""
import sys

from gradolab.model import MonodKinetics, Species, make_network
from gradolab.ode import IntegratorOptions
from gradolab.rtm import RtmOptions, rtm_run_to_steady
from gradolab.sweeps import ode_steady_state

MU_MAX, K_S, S_IN, Q = 5e-4, 1.0, 3.0, 1e-5


def main(ns):
    mu_in = MU_MAX * S_IN / (K_S + S_IN)
    for n in ns:
        D = Q * n
        gain = D / (D - mu_in) if D > mu_in else float("inf")
        cfg = make_network([1 / n] * n, Q, S_IN, [Species("b", MonodKinetics(MU_MAX, K_S))], (5.0, [2.0]))
        rtm, _ = rtm_run_to_steady(cfg, RtmOptions(t_max=1e9))
        ode = ode_steady_state(cfg, IntegratorOptions(rel_tol=1e-10, abs_tol=1e-14, t_max=1e9, ss_tol=1e-12))
        print(f"n={n:2d} gain/tank={gain:8.3g} gain^n={gain ** n:9.3g} "
              f"S_out ode={ode.state.S[-1]:.6g} rtm={rtm.state.S[-1]:.3g} "
              f"B_out ode={ode.state.B[-1, 0]:.3g} rtm={rtm.state.B[-1, 0]:.3g}")


if __name__ == "__main__":
    main([int(a) for a in sys.argv[1:]] or [30, 37, 38, 40, 45, 50])
