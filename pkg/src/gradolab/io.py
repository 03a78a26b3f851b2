"""JSON configuration, CSV tables and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable

from .model import DAY, ConfigError, MonodKinetics, NetworkConfig, NetworkState, Reactor, Species, validate_network
from .ode import IntegratorOptions
from .rtm import RtmOptions
from .sweeps import SweepTable

__version__ = "0.1.0"

_TOP_KEYS = {"time_unit", "reactors", "flow_q", "s_in", "species", "initial", "ode", "rtm", "reactions"}
_REQUIRED = ("reactors", "flow_q", "s_in", "species", "initial")
_REACTOR_KEYS = {"volume"}
_SPECIES_KEYS = {"name", "mu_max", "k_s", "yield"}
_INITIAL_KEYS = {"S", "B"}

# option fields carrying a time (scaled up) or a per-time quantity (scaled down)
_ODE_TIMES = {"dt_init", "dt_max", "t_max"}
_RTM_TIMES = {"dt_init", "dt_max", "t_max"}
_PER_TIME = {"ss_tol"}


@dataclass(frozen=True)
class ParsedConfig:
    network: NetworkConfig
    ode: IntegratorOptions = IntegratorOptions()
    rtm: RtmOptions = RtmOptions()


def _number(value, path, errors, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{path}: expected a number, got {value!r}")
        return math.nan
    return float(value)


def _check_keys(obj, allowed, path, errors) -> bool:
    if not isinstance(obj, dict):
        errors.append(f"{path or 'config'}: expected an object, got {type(obj).__name__}")
        return False
    for key in sorted(set(obj) - allowed):
        errors.append(f"{path}.{key}: unknown key" if path else f"{key}: unknown key")
    return True


def _options(cls, raw, section, scale, times, errors):
    if raw is None:
        return cls()
    names = {f.name for f in fields(cls)}
    if not _check_keys(raw, names, section, errors):
        return cls()
    kw = {}
    for key, value in raw.items():
        if key not in names:
            continue
        path = f"{section}.{key}"
        if key == "method":
            if not isinstance(value, str):
                errors.append(f"{path}: expected a string, got {value!r}")
                continue
            kw[key] = value
        elif key == "newton_max_iter":
            if isinstance(value, bool) or not isinstance(value, int):
                errors.append(f"{path}: expected an integer, got {value!r}")
                continue
            kw[key] = value
        else:
            v = _number(value, path, errors, allow_none=key in ("t_max", "dt_max", "inflow_biomass"))
            if v is None and key == "dt_max":
                v = math.inf  # null means no cap
            if v is not None and math.isfinite(v):
                if key in times:
                    v *= scale
                elif key in _PER_TIME:
                    v /= scale
            kw[key] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        errors.append(f"{section}: {exc}")
        return cls()


def parse_config(text: str) -> ParsedConfig:
    """Parse a JSON run configuration; times become seconds and rates 1/s.

    Raises :class:`ConfigError` on malformed JSON (with line and column),
    unknown keys, wrong types or any network invariant violation.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    errors: list[str] = []
    if not _check_keys(raw, _TOP_KEYS, "", errors):
        raise ConfigError(errors)
    for key in _REQUIRED:
        if key not in raw:
            errors.append(f"{key}: missing required key")
    unit = raw.get("time_unit", "s")
    if unit not in ("s", "day"):
        errors.append(f"time_unit: must be \"s\" or \"day\", got {unit!r}")
        unit = "s"
    scale = DAY if unit == "day" else 1.0

    reactors = []
    rlist = raw.get("reactors", [])
    if not isinstance(rlist, list):
        errors.append("reactors: expected a list")
        rlist = []
    for i, r in enumerate(rlist):
        if _check_keys(r, _REACTOR_KEYS, f"reactors[{i}]", errors):
            if "volume" not in r:
                errors.append(f"reactors[{i}].volume: missing required key")
            reactors.append(Reactor(_number(r.get("volume"), f"reactors[{i}].volume", errors)))

    species = []
    slist = raw.get("species", [])
    if not isinstance(slist, list):
        errors.append("species: expected a list")
        slist = []
    for j, sp in enumerate(slist):
        path = f"species[{j}]"
        if not _check_keys(sp, _SPECIES_KEYS, path, errors):
            continue
        for key in ("name", "mu_max", "k_s"):
            if key not in sp:
                errors.append(f"{path}.{key}: missing required key")
        name = sp.get("name", f"species{j + 1}")
        if not isinstance(name, str) or not name:
            errors.append(f"{path}.name: expected a non-empty string, got {name!r}")
            name = f"species{j + 1}"
        mu = _number(sp.get("mu_max"), f"{path}.mu_max", errors) / scale
        ks = _number(sp.get("k_s"), f"{path}.k_s", errors)
        yk = _number(sp.get("yield", 1.0), f"{path}.yield", errors)
        species.append(Species(name, MonodKinetics(mu, ks), yk))

    cells = []
    ilist = raw.get("initial", [])
    if not isinstance(ilist, list):
        errors.append("initial: expected a list with one {S, B} entry per reactor")
        ilist = []
    for i, c in enumerate(ilist):
        path = f"initial[{i}]"
        if not _check_keys(c, _INITIAL_KEYS, path, errors):
            continue
        s = _number(c.get("S"), f"{path}.S", errors)
        b = c.get("B", [])
        if not isinstance(b, list):
            errors.append(f"{path}.B: expected a list")
            b = []
        cells.append([s] + [_number(v, f"{path}.B[{k}]", errors) for k, v in enumerate(b)])
    widths = {len(c) for c in cells}
    if len(widths) > 1:
        errors.append("initial: every reactor must list the same number of biomass values")

    flow = _number(raw.get("flow_q"), "flow_q", errors) / scale
    s_in = _number(raw.get("s_in"), "s_in", errors)
    reactions = raw.get("reactions", True)
    if not isinstance(reactions, bool):
        errors.append(f"reactions: expected true or false, got {reactions!r}")
        reactions = True

    ode = _options(IntegratorOptions, raw.get("ode"), "ode", scale, _ODE_TIMES, errors)
    rtm = _options(RtmOptions, raw.get("rtm"), "rtm", scale, _RTM_TIMES, errors)
    if errors:
        raise ConfigError(errors)

    init = NetworkState(0.0, cells if cells else [[0.0]])
    cfg = NetworkConfig(tuple(reactors), flow, s_in, tuple(species), init, reactions)
    validate_network(cfg)
    return ParsedConfig(cfg, ode, rtm)


def load_config(path) -> ParsedConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError([f"config: cannot read {path}: {exc}"]) from None
    return parse_config(text)


def _opt_dict(opts) -> dict:
    d = asdict(opts)
    if d.get("dt_max") == math.inf:
        d["dt_max"] = None
    return d


def config_dict(parsed: ParsedConfig | NetworkConfig) -> dict:
    """Plain-data form in seconds, every option spelled out."""
    if isinstance(parsed, NetworkConfig):
        parsed = ParsedConfig(parsed)
    cfg = parsed.network
    return {
        "time_unit": "s",
        "reactors": [{"volume": r.volume} for r in cfg.reactors],
        "flow_q": cfg.flow_q,
        "s_in": cfg.s_in,
        "species": [
            {"name": sp.name, "mu_max": sp.kinetics.mu_max, "k_s": sp.kinetics.k_s, "yield": sp.yield_k}
            for sp in cfg.species
        ],
        "initial": [{"S": float(row[0]), "B": [float(b) for b in row[1:]]} for row in cfg.initial.values],
        "reactions": cfg.reactions,
        "ode": _opt_dict(parsed.ode),
        "rtm": _opt_dict(parsed.rtm),
    }


def dump_config(parsed: ParsedConfig | NetworkConfig) -> str:
    return json.dumps(config_dict(parsed), indent=2) + "\n"


def config_digest(parsed: ParsedConfig | NetworkConfig) -> str:
    """sha256 of the canonical (sorted, compact) config text."""
    canon = json.dumps(config_dict(parsed), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ------------------------------------------------------------------ tables


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_header(table: SweepTable) -> list[str]:
    cols = ["param", "cell", "S_ode"]
    cols += [f"B_{name}_ode" for name in table.species]
    cols += ["S_rtm"]
    cols += [f"B_{name}_rtm" for name in table.species]
    cols += ["delta", "outcome_ode", "outcome_rtm", "converged_ode", "converged_rtm"]
    return cols


def sweep_records(table: SweepTable) -> Iterable[list]:
    """One record per (row, tracked cell); cells are numbered from 1."""
    m = len(table.species)
    for row in table.rows:
        for pos, k in enumerate(row.cells):
            rec = [float(row.param), k + 1]
            for run in (row.ode, row.rtm):
                if run.state is None:
                    rec += [math.nan] * (1 + m)
                else:
                    rec += [float(v) for v in run.state.values[k]]
            rec.append(float(row.delta[pos]))
            for run in (row.ode, row.rtm):
                rec.append(str(run.outcomes[k]) if run.state is not None else "Failed")
            rec += [bool(row.ode.converged), bool(row.rtm.converged)]
            yield rec


def _write(path, header, records):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in records:
            w.writerow([_fmt(v) for v in rec])
    return path


def write_csv(table: SweepTable, path) -> Path:
    return _write(path, sweep_header(table), sweep_records(table))


def write_trajectory_csv(states: list[NetworkState], species: Iterable[str], path) -> Path:
    names = list(species)
    header = ["time", "cell", "S"] + [f"B_{n}" for n in names]

    def records():
        for st in states:
            for k, row in enumerate(st.values):
                yield [st.time, k + 1] + [float(v) for v in row]

    return _write(path, header, records())


def read_csv(path) -> list[dict]:
    """Rows as dicts, numeric fields back as floats/ints and flags as bools."""
    out = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                if v in ("true", "false"):
                    row[k] = v == "true"
                elif k == "cell":
                    row[k] = int(v)
                else:
                    try:
                        row[k] = float(v)
                    except ValueError:
                        row[k] = v
            out.append(row)
    return out


# ---------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    version: str
    config_digest: str
    argv: list[str]
    duration_s: float
    outputs: list[str] = field(default_factory=list)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")
        return path
