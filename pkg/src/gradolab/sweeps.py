"""Engine-to-engine comparison: the substrate gap between the two engines,
competition outcomes, parameter sweeps and the preset study scenarios."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .model import MonodKinetics, NetworkConfig, NetworkState, Species, make_network, validate_network
from .ode import IntegratorOptions, SteadyStateReport, find_steady_state, make_rhs
from .rtm import RtmOptions, rtm_run_to_steady
from .stability import UNSTABLE, EquilibriumError, classify_equilibrium, network_spectrum, refine_equilibrium

EXTINCTION_THRESHOLD = 1e-6  # mol/l
POLISH_RADIUS = 1e-3  # relative distance a Newton-polished point may move
THREADS_ENV = "GRADOLAB_THREADS"


class Outcome(str, Enum):
    WASHOUT = "Washout"
    SURVIVAL = "Survival"
    WINNER1 = "Winner1"
    WINNER2 = "Winner2"
    COEXISTENCE = "Coexistence"
    TOTAL_WASHOUT = "TotalWashout"

    def __str__(self):
        return self.value


def delta_indicator(ss_ode: NetworkState, ss_rtm: NetworkState, cell: int) -> float:
    """``|S_rtm - S_ode|`` in reactor ``cell`` (0-based)."""
    if ss_ode.values.shape != ss_rtm.values.shape:
        raise ValueError(f"state shapes differ: {ss_ode.values.shape} vs {ss_rtm.values.shape}")
    n = ss_ode.n_reactors
    if not (0 <= cell < n):
        raise IndexError(f"cell {cell} out of range for {n} reactors")
    return abs(float(ss_rtm.S[cell]) - float(ss_ode.S[cell]))


def competition_outcome(ss: NetworkState, extinction_threshold: float = EXTINCTION_THRESHOLD) -> tuple[Outcome, ...]:
    """Outcome label for every reactor; a species counts as extinct where its
    biomass is below ``extinction_threshold``."""
    if not extinction_threshold > 0:
        raise ValueError("extinction_threshold must be positive")
    m = ss.n_species
    if m not in (1, 2):
        raise ValueError(f"outcomes are defined for one or two species, got {m}")
    out = []
    for row in ss.B:
        alive = tuple(bool(b >= extinction_threshold) for b in row)
        if m == 1:
            out.append(Outcome.SURVIVAL if alive[0] else Outcome.WASHOUT)
        elif alive == (True, True):
            out.append(Outcome.COEXISTENCE)
        elif alive[0]:
            out.append(Outcome.WINNER1)
        elif alive[1]:
            out.append(Outcome.WINNER2)
        else:
            out.append(Outcome.TOTAL_WASHOUT)
    return tuple(out)


def ode_steady_state(cfg: NetworkConfig, opts: IntegratorOptions = IntegratorOptions(), polish: bool = True) -> SteadyStateReport:
    """Integrate towards a steady state, then sharpen it with Newton.

    The explicit integrator stalls at a residual set by its own stability
    limit, so a tight steady-state test can take a very long time. When
    ``polish`` is on, the final state seeds a Newton solve of ``rhs = 0``.
    The root replaces the integrated state only if it lies within
    ``POLISH_RADIUS`` (relative) of it and is not an unstable equilibrium.
    """
    rep = find_steady_state(cfg, opts)
    if not polish:
        return rep
    x = rep.state.vector()
    try:
        eq = refine_equilibrium(cfg, rep.state)
    except EquilibriumError:
        return rep
    scale = max(1.0, float(np.max(np.abs(x))))
    if float(np.max(np.abs(eq.vector() - x))) > POLISH_RADIUS * scale:
        return rep
    if classify_equilibrium(network_spectrum(eq, cfg)).kind == UNSTABLE:
        return rep
    res = float(np.max(np.abs(make_rhs(cfg)(eq.vector()))))
    return SteadyStateReport(eq, res, True, rep.elapsed_model_time)


@dataclass(frozen=True)
class SweepOptions:
    ode: IntegratorOptions = IntegratorOptions()
    rtm: RtmOptions = RtmOptions()
    extinction_threshold: float = EXTINCTION_THRESHOLD
    tracked: tuple[int, ...] | None = None  # 0-based cells; None -> first and last
    polish: bool = True
    workers: int | None = None  # None -> GRADOLAB_THREADS or the CPU count

    def cells_for(self, n: int) -> tuple[int, ...]:
        if self.tracked is None:
            return (0,) if n == 1 else (0, n - 1)
        bad = [c for c in self.tracked if not 0 <= c < n]
        if bad:
            raise IndexError(f"tracked cells {bad} out of range for {n} reactors")
        return tuple(self.tracked)


@dataclass(frozen=True)
class EngineRun:
    state: NetworkState | None
    converged: bool
    outcomes: tuple[Outcome, ...] = ()
    error: str | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SweepRow:
    param: float
    cells: tuple[int, ...]
    ode: EngineRun
    rtm: EngineRun
    delta: tuple[float, ...]  # per tracked cell; nan when an engine failed

    @property
    def failed(self) -> bool:
        return self.ode.state is None or self.rtm.state is None


@dataclass(frozen=True)
class SweepTable:
    parameter: str  # "flow_q" or "n_cells"
    species: tuple[str, ...]
    rows: tuple[SweepRow, ...]

    def column(self, cell: str = "output", engine: str = "delta") -> np.ndarray:
        """Per-row series at the first (``"input"``) or last (``"output"``)
        tracked cell: ``"delta"``, ``"S_ode"`` or ``"S_rtm"``."""
        pick = {"input": 0, "output": -1}[cell]
        vals = []
        for r in self.rows:
            k = r.cells[pick]
            if engine == "delta":
                vals.append(r.delta[pick])
            else:
                run = r.ode if engine == "S_ode" else r.rtm
                vals.append(math.nan if run.state is None else float(run.state.S[k]))
        return np.array(vals)

    @property
    def params(self) -> np.ndarray:
        return np.array([r.param for r in self.rows])


def _engine(fn, threshold) -> EngineRun:
    try:
        rep, diag = fn()
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        return EngineRun(None, False, (), f"{type(exc).__name__}: {exc}")
    return EngineRun(rep.state, rep.converged, competition_outcome(rep.state, threshold), None, diag)


def run_row(param: float, cfg: NetworkConfig, opts: SweepOptions) -> SweepRow:
    """Both engines to steady state on ``cfg``; failures are caught and kept
    in the row."""
    cells = opts.cells_for(cfg.n_reactors)
    ode = _engine(lambda: (ode_steady_state(cfg, opts.ode, opts.polish), {}), opts.extinction_threshold)

    def rtm():
        rep, diag = rtm_run_to_steady(cfg, opts.rtm)
        return rep, diag.as_dict()

    rt = _engine(rtm, opts.extinction_threshold)
    if ode.state is None or rt.state is None:
        delta = tuple(math.nan for _ in cells)
    else:
        delta = tuple(delta_indicator(ode.state, rt.state, c) for c in cells)
    return SweepRow(float(param), cells, ode, rt, delta)


def _row_task(args):
    return run_row(*args)


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        if requested < 1:
            raise ValueError("workers must be >= 1")
        return requested
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def _run_rows(tasks, opts: SweepOptions) -> list[SweepRow]:
    workers = min(worker_count(opts.workers), max(1, len(tasks)))
    if workers == 1:
        return [_row_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map keeps submission order whatever the completion order
        return list(pool.map(_row_task, tasks))


def sweep_flow(cfg: NetworkConfig, q_grid: Sequence[float], opts: SweepOptions = SweepOptions()) -> SweepTable:
    """Run both engines at every flow rate in ``q_grid`` (l/s)."""
    qs = sorted(float(q) for q in q_grid)
    bad = [q for q in qs if not (math.isfinite(q) and q > 0)]
    if bad:
        raise ValueError(f"flow rates must be positive, got {bad}")
    validate_network(cfg)
    tasks = [(q, cfg.with_flow(q), opts) for q in qs]
    return SweepTable("flow_q", tuple(sp.name for sp in cfg.species), tuple(_run_rows(tasks, opts)))


def sweep_cells(cfg: NetworkConfig, n_range: Sequence[int], opts: SweepOptions = SweepOptions()) -> SweepTable:
    """Rebuild ``cfg`` with the total volume split over ``n`` equal cells for
    each ``n`` and run both engines."""
    ns = sorted(int(n) for n in n_range)
    if any(n < 3 for n in ns):
        raise ValueError("a chain needs at least three cells")
    validate_network(cfg)
    tasks = [(n, cfg.with_cells(n), opts) for n in ns]
    return SweepTable("n_cells", tuple(sp.name for sp in cfg.species), tuple(_run_rows(tasks, opts)))


# ---------------------------------------------------------------- presets


@dataclass(frozen=True)
class Scenario:
    name: str
    config: NetworkConfig
    sweep: str  # "flow" or "cells"
    values: tuple[float, ...]
    options: SweepOptions

    def run(self, **overrides) -> SweepTable:
        opts = replace(self.options, **overrides) if overrides else self.options
        if self.sweep == "flow":
            return sweep_flow(self.config, self.values, opts)
        return sweep_cells(self.config, [int(v) for v in self.values], opts)


_LONG_ODE = IntegratorOptions(rel_tol=1e-10, abs_tol=1e-14, t_max=1e9, ss_tol=1e-12)
_LONG_RTM = RtmOptions(t_max=1e9)


def _scenario_a():
    sp = Species("biomass", MonodKinetics(4e-5, 1.0))
    cfg = make_network([1 / 3] * 3, 6e-6, 3.0, [sp], (5.0, [2.0]))
    grid = tuple(float(q) for q in np.geomspace(1e-6, 2e-5, 60))
    return Scenario("A", cfg, "flow", grid, SweepOptions(_LONG_ODE, _LONG_RTM))


def _scenario_b():
    sp = Species("biomass", MonodKinetics(5e-4, 1.0))
    cfg = make_network([1 / 3] * 3, 1e-5, 3.0, [sp], (5.0, [2.0]))
    return Scenario("B", cfg, "cells", tuple(float(n) for n in range(3, 51)), SweepOptions(_LONG_ODE, _LONG_RTM))


def _two_species():
    return [Species("sp1", MonodKinetics(1e-3, 5.0)), Species("sp2", MonodKinetics(3e-3, 30.0))]


def _scenario_c():
    cfg = make_network([1 / 3] * 3, 2e-4, 20.0, _two_species(), (5.0, [2.0, 3.0]))
    grid = tuple(float(q) for q in np.geomspace(1e-5, 1e-3, 41))
    return Scenario("C", cfg, "flow", grid, SweepOptions(_LONG_ODE, _LONG_RTM))


def _scenario_d():
    sp = [Species("sp1", MonodKinetics(4.629e-5, 6.0)), Species("sp2", MonodKinetics(6.944e-5, 18.0))]
    vols = [0.10, 0.09, 0.01, 0.11, 0.09] + [0.04] * 15
    q = 0.3587e-5
    cfg = make_network(vols, q, 19.25, sp, (5.0, [2.0, 3.0]))
    # species 1 invades the downstream tanks along a slow manifold, so the
    # steady-state test has to be tight; backward Euler tolerates long steps
    ode = IntegratorOptions(t_max=1e11, ss_tol=1e-12)
    rtm = RtmOptions(dt_max=1e4, t_max=1e11, ss_tol=1e-12)
    opts = SweepOptions(ode, rtm, tracked=tuple(range(20)))
    return Scenario("D", cfg, "flow", (q,), opts)


_SCENARIOS = {"A": _scenario_a, "B": _scenario_b, "C": _scenario_c, "D": _scenario_d}


def scenario(name: str) -> Scenario:
    """Preset configuration and sweep plan ``A``, ``B``, ``C`` or ``D``."""
    try:
        return _SCENARIOS[name.upper()]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(_SCENARIOS)}") from None


SCENARIO_NAMES = tuple(_SCENARIOS)
