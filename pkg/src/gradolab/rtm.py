"""Log-concentration reactive-transport solver for a 1-D chain of control
volumes.

Transport is first-order upwind advection with no dispersion, porosity one.
Each time step is backward Euler with transport and reaction solved together
as one nonlinear system. The unknowns are ``u = ln c``; a concentration can
therefore never reach zero, and the inflow carries a small biomass
concentration instead of none.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .model import DAY, NetworkConfig, NetworkState
from .ode import SteadyStateReport


class RtmFailure(RuntimeError):
    pass


class NewtonFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class RtmOptions:
    dt_init: float = 1e-10 * DAY
    dt_max: float = 1e-3 * DAY
    newton_tol: float = 1e-8
    newton_max_iter: int = 12
    dt_growth: float = 2.0
    floor: float = 1e-15
    inflow_biomass: float | None = None  # None -> floor
    ss_tol: float = 1e-10
    t_max: float | None = None  # None -> 100 / min(D)

    def __post_init__(self):
        if not (0 < self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_init <= dt_max")
        if not self.floor > 0:
            raise ValueError("floor must be positive")
        if self.inflow_biomass is not None and self.inflow_biomass < self.floor:
            raise ValueError("inflow_biomass must be >= floor")
        if self.newton_tol <= 0 or self.ss_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")
        if self.dt_growth < 1:
            raise ValueError("dt_growth must be >= 1")
        if self.t_max is not None and self.t_max <= 0:
            raise ValueError("t_max must be positive")

    @property
    def inflow(self) -> float:
        return self.floor if self.inflow_biomass is None else self.inflow_biomass

    def horizon(self, cfg: NetworkConfig) -> float:
        if self.t_max is not None:
            return self.t_max
        return 100.0 / float(cfg.dilution.min())


@dataclass
class RtmDiagnostics:
    steps_taken: int = 0
    steps_rejected: int = 0
    newton_iterations_total: int = 0
    dt_min: float = math.inf
    dt_max: float = 0.0
    dt_last: float = 0.0
    max_log_magnitude: float = 0.0
    floor_activations: int = 0

    def merge(self, other: "RtmDiagnostics") -> None:
        self.steps_taken += other.steps_taken
        self.steps_rejected += other.steps_rejected
        self.newton_iterations_total += other.newton_iterations_total
        self.dt_min = min(self.dt_min, other.dt_min)
        self.dt_max = max(self.dt_max, other.dt_max)
        if other.steps_taken:
            self.dt_last = other.dt_last
        self.max_log_magnitude = max(self.max_log_magnitude, other.max_log_magnitude)
        self.floor_activations += other.floor_activations

    def as_dict(self) -> dict:
        return {
            "steps_taken": self.steps_taken,
            "steps_rejected": self.steps_rejected,
            "newton_iterations_total": self.newton_iterations_total,
            "dt_min": self.dt_min if self.steps_taken else None,
            "dt_max": self.dt_max if self.steps_taken else None,
            "dt_last": self.dt_last if self.steps_taken else None,
            "max_log_magnitude": self.max_log_magnitude,
            "floor_activations": self.floor_activations,
        }


class _System:
    """Per-config constants in the flat layout the compiled kernels expect."""

    def __init__(self, cfg: NetworkConfig, inflow_biomass: float):
        self.n, self.w = cfg.n_reactors, cfg.width
        self.N = self.n * self.w
        self.args = (
            cfg.volumes,
            float(cfg.flow_q),
            np.concatenate([[cfg.s_in], np.full(cfg.n_species, float(inflow_biomass))]),
            cfg.mu_max,
            cfg.k_s,
            1.0 / cfg.yields,
            bool(cfg.reactions),
            self.n,
            self.w,
        )

    def residual(self, c, c_old, dt):
        return _k.residual(c, c_old, dt, *self.args, np.empty(self.N))

    def jacobian(self, c, dt):
        V, Q, _, mu_max, k_s, inv_k, reactive, n, w = self.args
        return _k.jacobian(c, dt, V, Q, mu_max, k_s, inv_k, reactive, n, w, np.empty((self.N, self.N)))


def _check_state(state: NetworkState, cfg: NetworkConfig):
    if state.values.shape != (cfg.n_reactors, cfg.width):
        raise ValueError(f"state shape {state.values.shape} does not match config ({cfg.n_reactors}, {cfg.width})")


def rtm_residual(c_new: NetworkState, c_old: NetworkState, dt: float, cfg: NetworkConfig, inflow_biomass: float = 1e-15) -> np.ndarray:
    """Backward-Euler finite-volume residual, mol/s per cell and component,
    flattened cell-major:

    ``V_j (c - c_old) / dt - Q (c_up - c) - V_j r(c)``
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    _check_state(c_new, cfg)
    _check_state(c_old, cfg)
    if np.any(c_new.values <= 0):
        raise ValueError("log formulation requires strictly positive concentrations")
    return _System(cfg, inflow_biomass).residual(c_new.vector(), c_old.vector(), float(dt))


def rtm_jacobian(c: NetworkState, dt: float, cfg: NetworkConfig) -> np.ndarray:
    """d(residual)/dc in natural concentration variables."""
    _check_state(c, cfg)
    return _System(cfg, 0.0).jacobian(c.vector(), float(dt))


@dataclass(frozen=True)
class NewtonStep:
    u: np.ndarray
    delta_norm: float  # max |du| of the undamped update after the floor clamp
    residual_norm: float
    floor_activations: int
    halvings: int

    def converged(self, tol: float) -> bool:
        return self.delta_norm < tol


_FAILURES = {
    _k.SINGULAR: "singular Newton system",
    _k.NO_DECREASE: "residual did not decrease after 8 halvings",
    _k.MAX_ITER: "Newton iteration limit reached",
    _k.NON_FINITE: "non-finite Newton update",
}


def rtm_newton_step(u, c_old: NetworkState, dt: float, cfg: NetworkConfig, opts: RtmOptions = RtmOptions()) -> NewtonStep:
    """One damped Newton update of the log-concentration vector ``u``.

    Raises :class:`NewtonFailure` on a singular system or when step halving
    cannot reduce the residual.
    """
    u = np.array(u, dtype=float).ravel()
    if not np.all(np.isfinite(u)):
        raise ValueError("u must be finite")
    _check_state(c_old, cfg)
    sys = _System(cfg, opts.inflow)
    status, u_new, dnorm, rnorm, acts, halvings = _k.newton_iteration(
        u, c_old.vector(), float(dt), *sys.args, math.log(opts.floor)
    )
    if status != _k.OK:
        raise NewtonFailure(_FAILURES[status])
    return NewtonStep(u_new, dnorm, rnorm, int(acts), int(halvings))


@dataclass(frozen=True)
class AdvanceResult:
    state: NetworkState
    dt: float  # accepted step
    dt_next: float
    diagnostics: RtmDiagnostics


def _advance(sys: _System, c_old, t, dt, opts: RtmOptions):
    diag = RtmDiagnostics()
    dt_min = opts.dt_init * 1e-3
    while True:
        status, c, iters, acts, umax = _k.solve_step(
            c_old, dt, *sys.args, opts.floor, opts.newton_tol, opts.newton_max_iter
        )
        diag.newton_iterations_total += iters
        diag.floor_activations += acts
        if status == _k.OK:
            break
        diag.steps_rejected += 1
        dt *= 0.5
        if dt < dt_min:
            raise RtmFailure(f"time step underflow at t={t:.6g} s (dt={dt:.3g} s): {_FAILURES[status]}")
    diag.steps_taken = 1
    diag.dt_min = diag.dt_max = diag.dt_last = dt
    diag.max_log_magnitude = umax
    return c, dt, min(dt * opts.dt_growth, opts.dt_max), diag


def rtm_advance(state: NetworkState, opts: RtmOptions, cfg: NetworkConfig, dt: float | None = None) -> AdvanceResult:
    """Take one accepted implicit step from ``state``, starting at ``dt``
    (``opts.dt_init`` on the first call) and halving on Newton failure."""
    _check_state(state, cfg)
    sys = _System(cfg, opts.inflow)
    dt = opts.dt_init if dt is None else min(dt, opts.dt_max)
    c_old = np.maximum(state.vector(), opts.floor)
    c, dt_acc, dt_next, diag = _advance(sys, c_old, state.time, dt, opts)
    return AdvanceResult(NetworkState.from_vector(c, cfg.n_reactors, state.time + dt_acc), dt_acc, dt_next, diag)


def rtm_run_to_steady(cfg: NetworkConfig, opts: RtmOptions = RtmOptions(), trajectory: list | None = None) -> tuple[SteadyStateReport, RtmDiagnostics]:
    """Advance until ``max|dc/dt| < ss_tol * max(1, max|c|)`` or the horizon.

    Pass a list as ``trajectory`` to collect every accepted state.
    """
    sys = _System(cfg, opts.inflow)
    n = cfg.n_reactors
    t0 = cfg.initial.time
    t_end = t0 + opts.horizon(cfg)
    c = np.maximum(cfg.initial.vector(), opts.floor)
    t, dt = t0, opts.dt_init
    diag = RtmDiagnostics()
    rate = math.inf
    if trajectory is not None:
        trajectory.append(NetworkState.from_vector(c, n, t))
    while t < t_end:
        c_new, dt_acc, dt, d = _advance(sys, c, t, min(dt, t_end - t), opts)
        diag.merge(d)
        rate = float(np.max(np.abs(c_new - c))) / dt_acc
        t += dt_acc
        c = c_new
        if trajectory is not None:
            trajectory.append(NetworkState.from_vector(c, n, t))
        if rate < opts.ss_tol * max(1.0, float(np.max(c))):
            return SteadyStateReport(NetworkState.from_vector(c, n, t), rate, True, t - t0), diag
    return SteadyStateReport(NetworkState.from_vector(c, n, t), rate, False, t - t0), diag


def rtm_integrate(cfg: NetworkConfig, opts: RtmOptions = RtmOptions(), t_end: float | None = None) -> tuple[list[NetworkState], RtmDiagnostics]:
    """Every accepted state from ``cfg.initial`` up to ``t_end`` (default: the
    options' horizon), without stopping at a steady state."""
    sys = _System(cfg, opts.inflow)
    n = cfg.n_reactors
    t = cfg.initial.time
    stop = t + (opts.horizon(cfg) if t_end is None else t_end)
    c = np.maximum(cfg.initial.vector(), opts.floor)
    dt = opts.dt_init
    diag = RtmDiagnostics()
    traj = [NetworkState.from_vector(c, n, t)]
    while t < stop:
        c, dt_acc, dt, d = _advance(sys, c, t, min(dt, stop - t), opts)
        diag.merge(d)
        t = stop if stop - (t + dt_acc) <= 1e-12 * abs(stop) else t + dt_acc
        traj.append(NetworkState.from_vector(c, n, t))
    return traj, diag
