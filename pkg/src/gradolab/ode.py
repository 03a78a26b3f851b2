"""Explicit Runge-Kutta integration of the chemostat chain and steady-state
detection."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .model import NetworkConfig, NetworkState

SNAP = 1e-30


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorOptions:
    method: str = "dopri5"  # or "rk4" (fixed step = dt_init)
    dt_init: float = 1.0
    dt_max: float = math.inf
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    t_max: float | None = None  # None -> 100 / min(D)
    ss_tol: float = 1e-10

    def __post_init__(self):
        if self.method not in ("dopri5", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (0 < self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_init <= dt_max")
        if self.rel_tol <= 0 or self.abs_tol <= 0 or self.ss_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.t_max is not None and self.t_max <= 0:
            raise ValueError("t_max must be positive")

    def horizon(self, cfg: NetworkConfig) -> float:
        if self.t_max is not None:
            return self.t_max
        return 100.0 / float(cfg.dilution.min())


@dataclass(frozen=True)
class SteadyStateReport:
    state: NetworkState
    residual_norm: float
    converged: bool
    elapsed_model_time: float


def make_rhs(cfg: NetworkConfig) -> Callable[[np.ndarray], np.ndarray]:
    """Build ``f(y) -> dy/dt`` on flat state vectors for ``cfg``.

    No sign checks; the Monod terms are evaluated as written for any input.
    """
    n, w = cfg.n_reactors, cfg.width
    D = cfg.dilution[:, None]
    mu_max = cfg.mu_max
    k_s = cfg.k_s
    inv_k = 1.0 / cfg.yields
    s_in = cfg.s_in
    reactive = cfg.reactions

    def f(y: np.ndarray) -> np.ndarray:
        X = y.reshape(n, w)
        up = np.empty_like(X)
        up[0, 0] = s_in
        up[0, 1:] = 0.0
        up[1:] = X[:-1]
        dX = D * (up - X)
        if reactive:
            S = X[:, :1]
            growth = mu_max * S / (k_s + S) * X[:, 1:]
            dX[:, 1:] += growth
            dX[:, 0] -= growth @ inv_k
        return dX.ravel()

    return f


def rhs(state: NetworkState, cfg: NetworkConfig) -> np.ndarray:
    """Time derivative of ``state`` as a flat cell-major vector."""
    if state.values.shape != (cfg.n_reactors, cfg.width):
        raise ValueError(
            f"state shape {state.values.shape} does not match config ({cfg.n_reactors}, {cfg.width})"
        )
    if np.any(state.values < 0):
        raise ValueError("concentrations must be non-negative")
    return make_rhs(cfg)(state.vector())


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def dopri_step(f, y, h, k1):
    """One Dormand-Prince step. Returns ``(y_new, err_vector, k7)`` where
    ``k7 = f(y_new)`` is reusable as the next ``k1``."""
    a = _A
    k2 = f(y + h * (a[1][0] * k1))
    k3 = f(y + h * (a[2][0] * k1 + a[2][1] * k2))
    k4 = f(y + h * (a[3][0] * k1 + a[3][1] * k2 + a[3][2] * k3))
    k5 = f(y + h * (a[4][0] * k1 + a[4][1] * k2 + a[4][2] * k3 + a[4][3] * k4))
    k6 = f(y + h * (a[5][0] * k1 + a[5][1] * k2 + a[5][2] * k3 + a[5][3] * k4 + a[5][4] * k5))
    y_new = y + h * (a[6][0] * k1 + a[6][2] * k3 + a[6][3] * k4 + a[6][4] * k5 + a[6][5] * k6)
    k7 = f(y_new)
    err = h * (_E[0] * k1 + _E[2] * k3 + _E[3] * k4 + _E[4] * k5 + _E[5] * k6 + _E[6] * k7)
    return y_new, err, k7


def rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _steps(f, y0: np.ndarray, t0: float, t_end: float, opts: IntegratorOptions) -> Iterator[tuple[float, np.ndarray, np.ndarray]]:
    """Yield ``(t, y, f(y))`` after every accepted step."""
    t, y = t0, y0.copy()
    h_min = 1e-3 * opts.dt_init
    if opts.method == "rk4":
        h = opts.dt_init
        while t < t_end:
            step = min(h, t_end - t)
            y_new = rk4_step(f, y, step)
            if np.any(y_new < 0) or not np.all(np.isfinite(y_new)):
                raise IntegrationError(f"fixed-step RK4 left the non-negative orthant at t={t:.6g} s; reduce dt_init")
            y_new[y_new < SNAP] = 0.0
            # land exactly on t_end to avoid a trailing sliver step
            t = t_end if t_end - (t + step) <= 1e-12 * t_end else t + step
            y = y_new
            yield t, y, None
        return

    h = min(opts.dt_init, opts.dt_max)
    k1 = f(y)
    rejected = 0
    while t < t_end:
        last = t + h >= t_end
        step = t_end - t if last else h
        y_new, err, k7 = dopri_step(f, y, step, k1)
        scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        e = float(np.max(np.abs(err) / scale)) if y.size else 0.0
        if not math.isfinite(e):
            e = math.inf
        # negatives within the absolute tolerance are rounding-level and get
        # clamped; anything deeper is an overshoot and the step is retried
        if e <= 1.0 and y_new.min() >= -opts.abs_tol:
            y_new[y_new < SNAP] = 0.0
            t = t_end if last else t + step
            y, k1 = y_new, k7
            if e == 0.0:
                fac = 5.0
            else:
                fac = min(5.0, max(0.2, 0.9 * e ** -0.2))
            if rejected:
                fac = min(fac, 1.0)
            rejected = 0
            h = min(step * fac, opts.dt_max) if not last else h
            yield t, y, k1
        else:
            rejected += 1
            if e > 1.0 and math.isfinite(e):
                h = step * max(0.2, 0.9 * e ** -0.2)
            else:
                h = step * 0.5
            if h < h_min:
                raise IntegrationError(
                    f"step size underflow at t={t:.6g} s (h={h:.3g} s < {h_min:.3g} s) after {rejected} rejections"
                )


def integrate(cfg: NetworkConfig, opts: IntegratorOptions = IntegratorOptions(), t_end: float | None = None) -> list[NetworkState]:
    """Integrate from ``cfg.initial`` to ``t_end`` (default: the options'
    horizon). Returns every accepted state, starting with the initial one."""
    f = make_rhs(cfg)
    t0 = cfg.initial.time
    t_end = t0 + (opts.horizon(cfg) if t_end is None else t_end)
    n = cfg.n_reactors
    traj = [cfg.initial]
    for t, y, _ in _steps(f, cfg.initial.vector(), t0, t_end, opts):
        traj.append(NetworkState.from_vector(y, n, t))
    return traj


def find_steady_state(cfg: NetworkConfig, opts: IntegratorOptions = IntegratorOptions(), ss_tol: float | None = None) -> SteadyStateReport:
    """Integrate until ``max|f(y)| < ss_tol * max(1, max|y|)`` or the horizon."""
    tol = opts.ss_tol if ss_tol is None else ss_tol
    f = make_rhs(cfg)
    t0 = cfg.initial.time
    y = cfg.initial.vector()
    n = cfg.n_reactors

    def residual(y, fy):
        return float(np.max(np.abs(fy)))

    fy = f(y)
    res = residual(y, fy)
    t = t0
    if res < tol * max(1.0, float(np.max(np.abs(y)))):
        return SteadyStateReport(NetworkState.from_vector(y, n, t), res, True, 0.0)
    for t, y, fy in _steps(f, y, t0, t0 + opts.horizon(cfg), opts):
        if fy is None:
            fy = f(y)
        res = residual(y, fy)
        if res < tol * max(1.0, float(np.max(np.abs(y)))):
            return SteadyStateReport(NetworkState.from_vector(y, n, t), res, True, t - t0)
    return SteadyStateReport(NetworkState.from_vector(y, n, t), res, False, t - t0)
