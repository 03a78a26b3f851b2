"""Equilibria, Jacobians, spectra and hyperbolicity of the chemostat chain."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import MonodKinetics, NetworkConfig, NetworkState, growth_terms, monod_rate, monod_rate_derivative
from .ode import make_rhs

DEFAULT_TOL = 1e-9  # 1/s, on real parts
EPS = np.finfo(float).eps

EXPONENTIALLY_STABLE = "ExponentiallyStable"
UNSTABLE = "Unstable"
NON_HYPERBOLIC = "NonHyperbolic"


class EigenError(ArithmeticError):
    pass


class EquilibriumError(ArithmeticError):
    pass


@dataclass(frozen=True)
class EquilibriumPoint:
    label: str  # "E0", "E1", "E2" or "Numeric"
    state: tuple[float, ...]  # cell-major (S, B...) per reactor
    merged: bool = False  # E1 and E2 coincide (equal break-even levels)

    def as_state(self, n_reactors: int = 1) -> NetworkState:
        return NetworkState.from_vector(self.state, n_reactors)


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: tuple[complex, ...]
    residual: float  # max ||A v - lam v|| / ||v|| over eigenpairs

    @property
    def real(self) -> np.ndarray:
        return np.array([z.real for z in self.eigenvalues])


@dataclass(frozen=True)
class StabilityClass:
    kind: str
    margin: float  # min |Re lam|


@dataclass(frozen=True)
class EquilibriumReport:
    point: EquilibriumPoint
    spectrum: Spectrum
    stability: StabilityClass
    analytic: tuple[complex, ...] | None = None  # closed-form eigenvalues when known


def break_even(kin: MonodKinetics, D: float) -> float | None:
    """Substrate level where growth balances dilution, or None if growth can
    never reach ``D``."""
    if D < 0 or math.isnan(D):
        raise ValueError(f"dilution rate must be non-negative, got {D!r}")
    if D >= kin.mu_max:
        return None
    return kin.k_s * D / (kin.mu_max - D)


def _check_point(point: NetworkState, cfg: NetworkConfig) -> np.ndarray:
    if point.values.shape != (cfg.n_reactors, cfg.width):
        raise ValueError(
            f"state shape {point.values.shape} does not match config ({cfg.n_reactors}, {cfg.width})"
        )
    return point.values


def _cell_blocks(X: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    """Diagonal ``w x w`` blocks of the Jacobian, shape ``(n, w, w)``."""
    n, w = X.shape
    D = cfg.dilution
    blocks = np.zeros((n, w, w))
    idx = np.arange(w)
    blocks[:, idx, idx] = -D[:, None]
    if cfg.reactions:
        mu, dmu = growth_terms(X[:, 0], cfg)
        B = X[:, 1:]
        inv_k = 1.0 / cfg.yields
        blocks[:, 0, 0] -= (dmu * B) @ inv_k
        blocks[:, 0, 1:] = -mu * inv_k
        blocks[:, 1:, 0] = dmu * B
        blocks[:, idx[1:], idx[1:]] += mu
    return blocks


def jacobian_analytic(point: NetworkState, cfg: NetworkConfig) -> np.ndarray:
    """Exact Jacobian of the chain's right-hand side in (S, B...) coordinates."""
    X = _check_point(point, cfg)
    n, w = X.shape
    N = n * w
    J = np.zeros((N, N))
    blocks = _cell_blocks(X, cfg)
    for j in range(n):
        J[j * w:(j + 1) * w, j * w:(j + 1) * w] = blocks[j]
        if j > 0:
            # inflow from the upstream cell carries every component
            J[j * w + np.arange(w), (j - 1) * w + np.arange(w)] = cfg.dilution[j]
    return J


def jacobian_fd(point: NetworkState, cfg: NetworkConfig, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with per-component step ``h * max(1, |x_j|)``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = _check_point(point, cfg).ravel().copy()
    f = make_rhs(cfg)
    N = x.size
    J = np.empty((N, N))
    for j in range(N):
        step = h * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        J[:, j] = (f(xp) - f(xm)) / (xp[j] - xm[j])
    return J


def _poly_polish(coeffs, z, iters=3):
    """Newton refinement of a polynomial root; keeps a step only if |p| drops."""
    p = np.poly1d(coeffs)
    dp = p.deriv()
    best = abs(p(z))
    for _ in range(iters):
        d = dp(z)
        if d == 0 or best == 0:
            break
        cand = z - p(z) / d
        val = abs(p(cand))
        if not val < best:
            break
        z, best = cand, val
    return z


def _roots_2x2(A):
    a, b, c, d = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
    mean = 0.5 * (a + d)
    disc = (0.5 * (a - d)) ** 2 + b * c
    if disc >= 0:
        s = math.sqrt(disc)
        big = mean + math.copysign(s, mean) if mean != 0 else s
        det = a * d - b * c
        # det/big avoids cancellation unless big itself is rounding noise,
        # in which case the trace gives the better second root
        det_err = (abs(a * d) + abs(b * c)) / abs(big) if big != 0 else math.inf
        small = det / big if det_err <= abs(a) + abs(d) + abs(big) else (a + d) - big
        return [complex(big), complex(small)]
    s = math.sqrt(-disc)
    return [complex(mean, s), complex(mean, -s)]


def _roots_3x3(A):
    # characteristic polynomial lam^3 + a lam^2 + b lam + c
    a = -np.trace(A)
    b = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0] + A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0] + A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        c = -float(np.linalg.det(A))
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    shift = -a / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    # a discriminant within rounding of zero means a repeated real root
    if disc <= 64 * EPS * ((q / 2.0) ** 2 + abs(p / 3.0) ** 3):
        r = 2.0 * math.sqrt(max(-p, 0.0) / 3.0)
        if p * r == 0:  # p and q at rounding level (or underflowed)
            ts = [0.0, 0.0, 0.0]
        else:
            arg = 3.0 * q / (p * r)
            phi = math.acos(max(-1.0, min(1.0, arg))) / 3.0
            ts = [r * math.cos(phi - 2.0 * math.pi * k / 3.0) for k in range(3)]
        roots = [complex(t + shift) for t in ts]
    else:
        sq = math.sqrt(disc)
        w = -q / 2.0 - math.copysign(sq, q) if q != 0 else sq
        u = np.cbrt(w)
        v = -p / (3.0 * u) if u != 0 else 0.0
        t1 = u + v
        re = -0.5 * (u + v) + shift
        im = 0.5 * math.sqrt(3.0) * (u - v)
        roots = [complex(t1 + shift), complex(re, im), complex(re, -im)]
    coeffs = [1.0, a, b, c]
    out = []
    for z in roots:
        z = _poly_polish(coeffs, z)
        out.append(complex(z.real, 0.0) if abs(z.imag) == 0 else complex(z))
    # keep complex pairs exactly conjugate
    if abs(out[1].imag) > 0 and abs(out[2].imag) > 0:
        out[2] = out[1].conjugate()
    return out


def _deflate_3x3(A, roots):
    """Keep the best separated real root and take the other two from the
    2x2 block left after reflecting its eigenvector onto e1.

    Roots of the characteristic cubic lose half the digits on a repeated
    eigenvalue; the 2x2 formula on matrix entries does not.
    """
    real = [z for z in roots if z.imag == 0]
    if not real:
        return roots

    def sep(z):
        return min(abs(z - w) for w in roots if w is not z)

    lam = max(real, key=sep).real
    _, _, vh = np.linalg.svd(A - lam * np.eye(3))
    v = vh[-1]
    u = v.copy()
    u[0] += math.copysign(1.0, v[0]) * np.linalg.norm(v)
    H = np.eye(3) - 2.0 * np.outer(u, u) / (u @ u)
    R = H @ A @ H
    return [complex(lam)] + _roots_2x2(R[1:, 1:])


def _closed_form(A):
    n = A.shape[0]
    if n == 1:
        return [complex(A[0, 0])]
    if n == 2:
        return _roots_2x2(A)
    return _deflate_3x3(A, _roots_3x3(A))


def _eigpair_residual(A, lam):
    M = A.astype(complex) - lam * np.eye(A.shape[0])
    _, s, vh = np.linalg.svd(M)
    v = vh[-1].conj()
    return float(np.linalg.norm(A @ v - lam * v) / np.linalg.norm(v))


def eigenvalues(A) -> Spectrum:
    """Full spectrum of a real square matrix.

    Up to 3x3 the roots of the characteristic polynomial are taken in closed
    form; larger matrices go through LAPACK's Hessenberg QR iteration.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    n = A.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if n > 512:
        raise ValueError("dimension above 512 is not supported")
    if not np.all(np.isfinite(A)):
        raise EigenError("matrix has non-finite entries")
    scale = float(np.max(np.abs(A)))
    if scale == 0.0:
        return Spectrum(tuple(0j for _ in range(n)), 0.0)
    if n <= 3:
        lams = [z * scale for z in _closed_form(A / scale)]
        res = max(_eigpair_residual(A, z) for z in lams)
        return Spectrum(tuple(lams), res)
    try:
        w, v = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"QR iteration did not converge: {exc}") from exc
    cols = np.linalg.norm(A @ v - v * w, axis=0) / np.linalg.norm(v, axis=0)
    # an occasional poor eigenvector (badly scaled input) says nothing about
    # its eigenvalue; re-measure those pairs with the singular-vector check
    limit = 1e-12 * max(scale, float(np.max(np.abs(w))))
    for k in np.flatnonzero(~(cols <= limit)):
        cols[k] = _eigpair_residual(A, w[k])
    return Spectrum(tuple(complex(z) for z in w), float(np.max(cols)))


def network_spectrum(point: NetworkState, cfg: NetworkConfig) -> Spectrum:
    """Spectrum of :func:`jacobian_analytic` taken block by block.

    The chain's Jacobian is block lower-triangular, so its eigenvalues are
    those of the per-cell diagonal blocks. Working per block avoids the
    large rounding spread a dense solver shows on the defective matrices that
    equal-volume chains produce.
    """
    X = _check_point(point, cfg)
    lams: list[complex] = []
    res = 0.0
    for blk in _cell_blocks(X, cfg):
        sp = eigenvalues(blk)
        lams.extend(sp.eigenvalues)
        res = max(res, sp.residual)
    return Spectrum(tuple(lams), res)


def classify_equilibrium(s: Spectrum, tol: float = DEFAULT_TOL) -> StabilityClass:
    if not s.eigenvalues:
        raise ValueError("empty spectrum")
    if not tol > 0:
        raise ValueError("tol must be positive")
    re = s.real
    margin = float(np.min(np.abs(re)))
    if np.any(np.abs(re) <= tol):
        return StabilityClass(NON_HYPERBOLIC, margin)
    if np.any(re > 0):
        return StabilityClass(UNSTABLE, margin)
    return StabilityClass(EXPONENTIALLY_STABLE, margin)


def _report(label, x, cfg, tol, analytic=None, merged=False) -> EquilibriumReport:
    state = NetworkState.from_vector(x, cfg.n_reactors)
    spec = network_spectrum(state, cfg)
    pt = EquilibriumPoint(label, tuple(float(v) for v in x), merged)
    return EquilibriumReport(pt, spec, classify_equilibrium(spec, tol), analytic)


def single_species_equilibria(cfg: NetworkConfig, tol: float = DEFAULT_TOL) -> list[EquilibriumReport]:
    """Washout ``E1 = (S_in, 0)`` and, when growth can balance dilution below
    ``S_in``, the survival point ``E2 = (lam, k (S_in - lam))``."""
    if cfg.n_reactors != 1 or cfg.n_species != 1:
        raise ValueError("single_species_equilibria needs exactly one reactor and one species")
    D = float(cfg.dilution[0])
    sp = cfg.species[0]
    kin, k = sp.kinetics, sp.yield_k
    s_in = cfg.s_in
    mu_in = monod_rate(s_in, kin)
    out = [_report("E1", [s_in, 0.0], cfg, tol, (complex(-D), complex(mu_in - D)))]
    lam = break_even(kin, D)
    if lam is not None and lam < s_in and abs(mu_in - D) > tol:
        b = k * (s_in - lam)
        v2 = -monod_rate_derivative(lam, kin) / k * b
        out.append(_report("E2", [lam, b], cfg, tol, (complex(-D), complex(v2))))
    return out


def two_species_equilibria(cfg: NetworkConfig, tol: float = DEFAULT_TOL) -> list[EquilibriumReport]:
    """``E0 = (S_in, 0, 0)`` and the single-survivor points ``E1``, ``E2``
    that exist. Equal break-even levels give one merged non-hyperbolic point."""
    if cfg.n_reactors != 1 or cfg.n_species != 2:
        raise ValueError("two_species_equilibria needs exactly one reactor and two species")
    D = float(cfg.dilution[0])
    s_in = cfg.s_in
    kins = [sp.kinetics for sp in cfg.species]
    ks = [sp.yield_k for sp in cfg.species]
    mu_in = [monod_rate(s_in, kin) for kin in kins]
    out = [_report("E0", [s_in, 0.0, 0.0], cfg, tol, (complex(-D), complex(mu_in[0] - D), complex(mu_in[1] - D)))]
    lams = [break_even(kin, D) for kin in kins]
    exists = [lam is not None and lam < s_in and abs(mu_in[i] - D) > tol for i, lam in enumerate(lams)]
    merged = exists[0] and exists[1] and abs(monod_rate(lams[0], kins[1]) - D) <= tol
    for i in (0, 1):
        if not exists[i]:
            continue
        if merged and i == 1:
            break
        j = 1 - i
        lam = lams[i]
        x = [lam, 0.0, 0.0]
        x[1 + i] = ks[i] * (s_in - lam)
        v2 = -monod_rate_derivative(lam, kins[i]) * (s_in - lam)
        v3 = monod_rate(lam, kins[j]) - D
        out.append(_report(f"E{i + 1}", x, cfg, tol, (complex(-D), complex(v2), complex(v3)), merged))
    return out


def refine_equilibrium(cfg: NetworkConfig, seed: NetworkState, max_iter: int = 60) -> NetworkState:
    """Damped Newton on ``rhs = 0`` started from ``seed``.

    Raises :class:`EquilibriumError` if the iteration stalls, meets a singular
    Jacobian, or ends at a point with a clearly negative concentration.
    """
    f = make_rhs(cfg)
    n = cfg.n_reactors
    x = _check_point(seed, cfg).ravel().copy()
    rate = float(cfg.dilution.max())
    fx = f(x)
    for _ in range(max_iter):
        scale = max(1.0, float(np.max(np.abs(x))))
        r0 = float(np.max(np.abs(fx)))
        if r0 == 0.0:
            break
        at_noise = r0 <= 1e-14 * rate * scale
        J = jacobian_analytic(NetworkState.from_vector(np.maximum(x, 0.0), n), cfg)
        try:
            dx = np.linalg.solve(J, -fx)
        except np.linalg.LinAlgError as exc:
            raise EquilibriumError(f"singular Jacobian: {exc}") from exc
        if not np.all(np.isfinite(dx)):
            raise EquilibriumError("non-finite Newton step")
        alpha = 1.0
        for _ in range(30):
            xt = x + alpha * dx
            ft = f(xt)
            if float(np.max(np.abs(ft))) < r0:
                break
            alpha *= 0.5
        else:
            if at_noise:
                break
            raise EquilibriumError("Newton line search failed")
        x, fx = xt, ft
        if float(np.max(np.abs(alpha * dx))) <= 1e-15 * scale:
            break
    else:
        raise EquilibriumError(f"no convergence in {max_iter} iterations")
    scale = max(1.0, float(np.max(np.abs(x))))
    if np.any(x < -1e-10 * scale):
        raise EquilibriumError("Newton converged to a point with negative concentrations")
    x = np.maximum(x, 0.0)
    if float(np.max(np.abs(f(x)))) > 1e-10 * rate * scale:
        raise EquilibriumError("Newton did not reach a root")
    return NetworkState.from_vector(x, n, seed.time)


def network_equilibrium(cfg: NetworkConfig, seed: NetworkState, tol: float = DEFAULT_TOL) -> EquilibriumReport:
    """Refine ``seed`` to an equilibrium of an arbitrary chain and classify it."""
    eq = refine_equilibrium(cfg, seed)
    return _report("Numeric", eq.vector(), cfg, tol)


def to_z_coordinates(cfg: NetworkConfig) -> np.ndarray:
    """Matrix ``T`` mapping single-cell (S, B_1, ..., B_m) to
    (Z, B_1, ..., B_m) with ``Z = S + sum_i B_i / k_i``."""
    if cfg.n_reactors != 1:
        raise ValueError("the total-mass coordinate change is defined for one reactor")
    w = cfg.width
    T = np.eye(w)
    T[0, 1:] = 1.0 / cfg.yields
    return T


def equilibrium_residual(report: EquilibriumReport, cfg: NetworkConfig) -> float:
    x = np.array(report.point.state)
    return float(np.max(np.abs(make_rhs(cfg)(x))))


__all__ = [
    "EigenError",
    "EquilibriumError",
    "EquilibriumPoint",
    "EquilibriumReport",
    "Spectrum",
    "StabilityClass",
    "break_even",
    "classify_equilibrium",
    "eigenvalues",
    "jacobian_analytic",
    "jacobian_fd",
    "network_equilibrium",
    "network_spectrum",
    "refine_equilibrium",
    "single_species_equilibria",
    "two_species_equilibria",
    "to_z_coordinates",
]
