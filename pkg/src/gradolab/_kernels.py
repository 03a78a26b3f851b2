"""Compiled inner loops for the implicit transport solver.

Flat vectors are cell-major with ``w = 1 + m`` entries per cell: substrate
first, then one biomass entry per species.
"""
import math

import numpy as np
from numba import njit

EPS = np.finfo(np.float64).eps

OK = 0
SINGULAR = 1
NO_DECREASE = 2
MAX_ITER = 3
NON_FINITE = 4


@njit(cache=True)
def residual(c, c_old, dt, V, Q, ghost, mu_max, k_s, inv_k, reactive, n, w, out):
    m = w - 1
    for j in range(n):
        for l in range(w):
            k = j * w + l
            up = ghost[l] if j == 0 else c[k - w]
            out[k] = V[j] * (c[k] - c_old[k]) / dt - Q * (up - c[k])
        if reactive:
            s = c[j * w]
            for i in range(m):
                g = mu_max[i] * s / (k_s[i] + s) * c[j * w + 1 + i]
                out[j * w + 1 + i] -= V[j] * g
                out[j * w] += V[j] * g * inv_k[i]
    return out


@njit(cache=True)
def residual_noise(c, c_old, dt, V, Q, ghost, mu_max, k_s, inv_k, reactive, n, w):
    """Rounding-level size of the residual: 64 eps times the norm of the
    summed term magnitudes."""
    m = w - 1
    acc = 0.0
    for j in range(n):
        for l in range(w):
            k = j * w + l
            up = ghost[l] if j == 0 else c[k - w]
            t = V[j] * (abs(c[k]) + abs(c_old[k])) / dt + Q * (abs(up) + abs(c[k]))
            if reactive:
                s = c[j * w]
                if l == 0:
                    for i in range(m):
                        t += V[j] * abs(mu_max[i] * s / (k_s[i] + s) * c[j * w + 1 + i]) * inv_k[i]
                else:
                    t += V[j] * abs(mu_max[l - 1] * s / (k_s[l - 1] + s) * c[k])
            acc += t * t
    return 64.0 * EPS * math.sqrt(acc)


@njit(cache=True)
def jacobian(c, dt, V, Q, mu_max, k_s, inv_k, reactive, n, w, J):
    """dR/dc into ``J`` (overwritten)."""
    m = w - 1
    J[:, :] = 0.0
    for j in range(n):
        for l in range(w):
            k = j * w + l
            J[k, k] = V[j] / dt + Q
            if j > 0:
                J[k, k - w] = -Q
        if reactive:
            si = j * w
            s = c[si]
            for i in range(m):
                bi = si + 1 + i
                den = k_s[i] + s
                mu = mu_max[i] * s / den
                dmu = mu_max[i] * k_s[i] / (den * den)
                J[si, si] += V[j] * dmu * c[bi] * inv_k[i]
                J[si, bi] += V[j] * mu * inv_k[i]
                J[bi, si] -= V[j] * dmu * c[bi]
                J[bi, bi] -= V[j] * mu
    return J


@njit(cache=True)
def lu_solve(A, b):
    """Solve ``A x = b`` by Gaussian elimination with partial pivoting.

    ``A`` and ``b`` are destroyed. Returns ``(x, ok)``; ``ok`` is False when a
    pivot is exactly zero or non-finite.
    """
    N = b.shape[0]
    for col in range(N):
        p = col
        best = abs(A[col, col])
        for r in range(col + 1, N):
            v = abs(A[r, col])
            if v > best:
                best = v
                p = r
        if best == 0.0 or not math.isfinite(best):
            return b, False
        if p != col:
            for cc in range(col, N):
                tmp = A[col, cc]
                A[col, cc] = A[p, cc]
                A[p, cc] = tmp
            tmp = b[col]
            b[col] = b[p]
            b[p] = tmp
        piv = A[col, col]
        for r in range(col + 1, N):
            f = A[r, col] / piv
            if f != 0.0:
                A[r, col] = 0.0
                for cc in range(col + 1, N):
                    A[r, cc] -= f * A[col, cc]
                b[r] -= f * b[col]
    for r in range(N - 1, -1, -1):
        acc = b[r]
        for cc in range(r + 1, N):
            acc -= A[r, cc] * b[cc]
        b[r] = acc / A[r, r]
    return b, True


@njit(cache=True)
def _norm(x):
    acc = 0.0
    for v in x:
        acc += v * v
    return math.sqrt(acc)


@njit(cache=True)
def newton_iteration(u, c_old, dt, V, Q, ghost, mu_max, k_s, inv_k, reactive, n, w, log_floor):
    """One damped Newton update in log variables.

    Returns ``(status, u_new, max|du| of the projected full step, |R(u_new)|,
    floor_activations, halvings)``.
    """
    N = n * w
    c = np.exp(u)
    R = np.empty(N)
    residual(c, c_old, dt, V, Q, ghost, mu_max, k_s, inv_k, reactive, n, w, R)
    r0 = _norm(R)
    J = np.empty((N, N))
    jacobian(c, dt, V, Q, mu_max, k_s, inv_k, reactive, n, w, J)
    for k in range(N):
        for r in range(N):
            J[r, k] *= c[k]
    rhs = -R
    du, ok = lu_solve(J, rhs)
    if not ok:
        return SINGULAR, u, 0.0, r0, 0, 0
    # convergence is judged on the projected step: components the floor
    # clamp would pull straight back do not count
    dnorm = 0.0
    for k in range(N):
        if not math.isfinite(du[k]):
            return NON_FINITE, u, 0.0, r0, 0, 0
        dnorm = max(dnorm, abs(max(u[k] + du[k], log_floor) - u[k]))
    noise = -1.0
    trial = np.empty(N)
    ct = np.empty(N)
    Rt = np.empty(N)
    alpha = 1.0
    for h in range(9):
        acts = 0
        for k in range(N):
            v = u[k] + alpha * du[k]
            if v < log_floor:
                v = log_floor
                acts += 1
            trial[k] = v
            ct[k] = math.exp(v)
        residual(ct, c_old, dt, V, Q, ghost, mu_max, k_s, inv_k, reactive, n, w, Rt)
        rt = _norm(Rt)
        if rt < r0:
            return OK, trial, dnorm, rt, acts, h
        if noise < 0.0:
            noise = residual_noise(c, c_old, dt, V, Q, ghost, mu_max, k_s, inv_k, reactive, n, w)
        if rt <= noise:
            return OK, trial, dnorm, rt, acts, h
        alpha *= 0.5
    return NO_DECREASE, u, dnorm, r0, 0, 8


@njit(cache=True)
def solve_step(c_old, dt, V, Q, ghost, mu_max, k_s, inv_k, reactive, n, w, floor, newton_tol, max_iter):
    """Newton solve of one backward-Euler step starting from ``c_old``.

    Returns ``(status, c_new, iterations, floor_activations, max|u|)``.
    """
    N = n * w
    log_floor = math.log(floor)
    u = np.empty(N)
    for k in range(N):
        u[k] = math.log(max(c_old[k], floor))
    acts = 0
    for it in range(max_iter):
        status, u, dnorm, rnorm, a, h = newton_iteration(
            u, c_old, dt, V, Q, ghost, mu_max, k_s, inv_k, reactive, n, w, log_floor
        )
        if status != OK:
            return status, c_old, it + 1, acts, 0.0
        acts += a
        if dnorm < newton_tol:
            umax = 0.0
            for k in range(N):
                umax = max(umax, abs(u[k]))
            return OK, np.exp(u), it + 1, acts, umax
    return MAX_ITER, c_old, max_iter, acts, 0.0
