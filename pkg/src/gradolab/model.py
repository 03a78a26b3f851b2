"""Domain types for chains of chemostats: Monod kinetics, species, reactors,
network configurations and states.

State vectors are laid out cell-major: for reactor ``i`` the block
``[S_i, B_1i, ..., B_mi]``. Every engine in the package uses this ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

DAY = 86400.0  # seconds


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``errors`` lists every violation found, each prefixed by the offending
    field path.
    """

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class MonodKinetics:
    mu_max: float  # 1/s
    k_s: float  # mol/l

    def rate(self, s):
        return monod_rate(s, self)

    def derivative(self, s):
        return monod_rate_derivative(s, self)


@dataclass(frozen=True)
class Species:
    name: str
    kinetics: MonodKinetics
    yield_k: float = 1.0


@dataclass(frozen=True)
class Reactor:
    volume: float  # l


@dataclass(frozen=True)
class CellState:
    S: float
    B: tuple[float, ...]


class NetworkState:
    """Concentrations of every reactor at one instant.

    ``values`` has shape ``(n_reactors, 1 + n_species)``; column 0 is the
    substrate. The array is read-only.
    """

    __slots__ = ("time", "values")

    def __init__(self, time: float, values):
        arr = np.array(values, dtype=float)
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise ValueError(f"state values must be 2-D (cells x components), got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "time", float(time))
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("NetworkState is immutable")

    def __reduce__(self):
        return (NetworkState, (self.time, np.array(self.values)))

    @classmethod
    def from_cells(cls, cells: Iterable[tuple[float, Sequence[float]]], time: float = 0.0) -> "NetworkState":
        cells = list(cells)
        widths = {len(b) for _, b in cells}
        if len(widths) > 1:
            raise ValueError("every cell must list the same number of biomass values")
        return cls(time, [[s, *b] for s, b in cells])

    @classmethod
    def from_vector(cls, x, n_reactors: int, time: float = 0.0) -> "NetworkState":
        return cls(time, np.asarray(x, dtype=float).reshape(n_reactors, -1))

    @property
    def n_reactors(self) -> int:
        return self.values.shape[0]

    @property
    def n_species(self) -> int:
        return self.values.shape[1] - 1

    @property
    def S(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def B(self) -> np.ndarray:
        """Biomass, shape ``(n_reactors, n_species)``."""
        return self.values[:, 1:]

    @property
    def cells(self) -> list[CellState]:
        return [CellState(float(r[0]), tuple(float(b) for b in r[1:])) for r in self.values]

    def vector(self) -> np.ndarray:
        return self.values.ravel().copy()

    def at(self, time: float) -> "NetworkState":
        return NetworkState(time, self.values)

    def __eq__(self, other):
        if not isinstance(other, NetworkState):
            return NotImplemented
        return self.time == other.time and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.time, self.values.tobytes()))

    def __repr__(self):
        return f"NetworkState(time={self.time!r}, values={self.values.tolist()!r})"


@dataclass(frozen=True)
class NetworkConfig:
    """A chain of reactors in series fed at reactor 1 with substrate ``s_in``.

    Setting ``reactions=False`` turns every growth term off so both engines
    reduce to a pure dilution cascade.
    """

    reactors: tuple[Reactor, ...]
    flow_q: float  # l/s
    s_in: float  # mol/l
    species: tuple[Species, ...]
    initial: NetworkState
    reactions: bool = True

    def __post_init__(self):
        object.__setattr__(self, "reactors", tuple(self.reactors))
        object.__setattr__(self, "species", tuple(self.species))

    @property
    def n_reactors(self) -> int:
        return len(self.reactors)

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def width(self) -> int:
        return 1 + len(self.species)

    @property
    def dim(self) -> int:
        return self.n_reactors * self.width

    @property
    def volumes(self) -> np.ndarray:
        return np.array([r.volume for r in self.reactors], dtype=float)

    @property
    def total_volume(self) -> float:
        return float(sum(r.volume for r in self.reactors))

    @property
    def dilution(self) -> np.ndarray:
        """Dilution rate ``Q / V_i`` of every reactor, 1/s."""
        return self.flow_q / self.volumes

    @property
    def mu_max(self) -> np.ndarray:
        return np.array([sp.kinetics.mu_max for sp in self.species], dtype=float)

    @property
    def k_s(self) -> np.ndarray:
        return np.array([sp.kinetics.k_s for sp in self.species], dtype=float)

    @property
    def yields(self) -> np.ndarray:
        return np.array([sp.yield_k for sp in self.species], dtype=float)

    def with_flow(self, flow_q: float) -> "NetworkConfig":
        return replace(self, flow_q=float(flow_q))

    def with_cells(self, n: int) -> "NetworkConfig":
        """Split the total volume evenly over ``n`` cells, each starting from
        the first cell's initial concentrations."""
        v = self.total_volume / n
        row = self.initial.values[0]
        init = NetworkState(self.initial.time, np.tile(row, (n, 1)))
        return replace(self, reactors=tuple(Reactor(v) for _ in range(n)), initial=init)

    def with_initial(self, state: NetworkState) -> "NetworkConfig":
        return replace(self, initial=state)


def monod_rate(s, kin: MonodKinetics):
    """Specific growth rate ``mu_max * S / (k_s + S)``; accepts scalars or arrays."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(np.isnan(s_arr)):
        raise ValueError(f"substrate concentration must be non-negative, got {s!r}")
    out = kin.mu_max * s_arr / (kin.k_s + s_arr)
    return float(out) if out.ndim == 0 else out


def monod_rate_derivative(s, kin: MonodKinetics):
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(np.isnan(s_arr)):
        raise ValueError(f"substrate concentration must be non-negative, got {s!r}")
    out = kin.mu_max * kin.k_s / (kin.k_s + s_arr) ** 2
    return float(out) if out.ndim == 0 else out


def _positive(value, path, errors):
    try:
        ok = np.isfinite(value) and value > 0
    except TypeError:
        ok = False
    if not ok:
        errors.append(f"{path}: must be positive, got {value!r}")


def validate_network(cfg: NetworkConfig) -> NetworkConfig:
    """Return ``cfg`` unchanged if every invariant holds, else raise
    :class:`ConfigError` listing all violations."""
    errors: list[str] = []
    if not cfg.reactors:
        errors.append("reactors: at least one reactor is required")
    for i, r in enumerate(cfg.reactors):
        _positive(r.volume, f"reactors[{i}].volume", errors)
    if not (np.isfinite(cfg.flow_q) and cfg.flow_q > 0):
        errors.append(f"flow_q: flow must be positive, got {cfg.flow_q!r}")
    if not (np.isfinite(cfg.s_in) and cfg.s_in >= 0):
        errors.append(f"s_in: must be non-negative, got {cfg.s_in!r}")
    if not cfg.species:
        errors.append("species: at least one species is required")
    names = [sp.name for sp in cfg.species]
    if len(set(names)) != len(names):
        errors.append(f"species: names must be unique, got {names}")
    for j, sp in enumerate(cfg.species):
        _positive(sp.kinetics.mu_max, f"species[{j}].mu_max", errors)
        _positive(sp.kinetics.k_s, f"species[{j}].k_s", errors)
        _positive(sp.yield_k, f"species[{j}].yield", errors)
    shape = cfg.initial.values.shape
    want = (len(cfg.reactors), 1 + len(cfg.species))
    if shape != want:
        errors.append(
            f"initial: dimension mismatch, expected {want[0]} reactors x {want[1]} components, got {shape[0]} x {shape[1]}"
        )
    vals = cfg.initial.values
    if not np.all(np.isfinite(vals)):
        errors.append("initial: concentrations must be finite")
    elif np.any(vals < 0):
        errors.append("initial: concentrations must be non-negative")
    if errors:
        raise ConfigError(errors)
    return cfg


def make_network(
    volumes: Sequence[float],
    flow_q: float,
    s_in: float,
    species: Sequence[Species],
    initial: tuple[float, Sequence[float]] | Sequence[tuple[float, Sequence[float]]],
    reactions: bool = True,
) -> NetworkConfig:
    """Convenience constructor. ``initial`` is either one ``(S, [B...])`` pair
    applied to every reactor or a list with one pair per reactor."""
    if len(initial) == 2 and np.isscalar(initial[0]):
        cells = [initial] * len(volumes)
    else:
        cells = list(initial)
    return NetworkConfig(
        reactors=tuple(Reactor(float(v)) for v in volumes),
        flow_q=float(flow_q),
        s_in=float(s_in),
        species=tuple(species),
        initial=NetworkState.from_cells(cells),
        reactions=reactions,
    )


def growth_terms(S: np.ndarray, cfg: NetworkConfig):
    """Unchecked vectorised Monod rates and derivatives, shape ``(n, m)``."""
    mu_max = cfg.mu_max
    k_s = cfg.k_s
    denom = k_s + S[:, None]
    mu = mu_max * S[:, None] / denom
    dmu = mu_max * k_s / denom**2
    return mu, dmu
