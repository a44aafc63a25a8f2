"""Run configuration parsing and result serialization.

Configuration files are JSON. Complex matrix entries are written either as
plain numbers or as ``[re, im]`` pairs. The README documents the full
schema; :func:`parse_config` reports every validation problem at once, each
prefixed with the path of the offending field.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .csl import LatticeConfig, basis_index, csl_model, lattice_hopping
from .ensemble import Decomposition
from .errors import ConfigError, QMonitorError
from .grw import JumpModel
from .hilbert import HermitianOperator, QuantumState
from .model import Channel, FeedbackSpec, MonitoringModel

EXPERIMENTS = ("me", "ensemble", "fwt", "grw", "csl", "convergence")

DEFAULTS = {
    "numerics": {"dt": 1e-3, "stride": 10, "me_dt": 1e-4},
    "ensemble": {"M": 1000, "seed": 0, "n_boot": 1000},
    "grw": {"rate": 1.0, "width": 1.0},
}


@dataclass
class RunConfig:
    experiment: str
    model: Any
    initial: Decomposition | None
    dt: float
    steps: int
    stride: int
    me_dt: float
    M: int
    seed: int
    n_boot: int = 1000
    decompositions: tuple[Decomposition, Decomposition] | None = None
    dt_list: list[float] | None = None
    T: float | None = None
    lattice: LatticeConfig | None = None
    out_dir: str | None = None
    echo: dict = field(default_factory=dict)


class _Errors:
    def __init__(self):
        self.items: list[str] = []

    def add(self, path: str, message: str):
        self.items.append(f"{path}: {message}" if path else message)


def _number(value, path, errors, *, minimum=None, exclusive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.add(path, "must be a number")
        return None
    if integer and not (isinstance(value, int) or float(value).is_integer()):
        errors.add(path, "must be an integer")
        return None
    if not math.isfinite(value):
        errors.add(path, "must be finite")
        return None
    if minimum is not None:
        if exclusive and not value > minimum:
            errors.add(path, f"must be > {minimum}")
            return None
        if not exclusive and value < minimum:
            errors.add(path, f"must be >= {minimum}")
            return None
    return int(value) if integer else float(value)


def _complex(value, path, errors):
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        return complex(value[0], value[1])
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    errors.add(path, "must be a number or an [re, im] pair")
    return None


def _vector(value, path, errors, dim=None):
    if not isinstance(value, list) or not value:
        errors.add(path, "must be a non-empty list")
        return None
    out = [_complex(v, f"{path}[{i}]", errors) for i, v in enumerate(value)]
    if any(v is None for v in out):
        return None
    if dim is not None and len(out) != dim:
        errors.add(path, f"must have length {dim}")
        return None
    return np.array(out, dtype=np.complex128)


def _matrix(value, path, errors, dim):
    if not isinstance(value, list) or len(value) != dim:
        errors.add(path, f"must be a {dim}x{dim} matrix")
        return None
    rows = [_vector(r, f"{path}[{i}]", errors, dim) for i, r in enumerate(value)]
    if any(r is None for r in rows):
        return None
    return np.stack(rows)


def _hermitian(value, path, errors, dim):
    m = _matrix(value, path, errors, dim)
    if m is None:
        return None
    try:
        return HermitianOperator(m)
    except QMonitorError as exc:
        errors.add(path, str(exc))
        return None


def _state(value, path, errors, dim, lattice=None):
    """A state is an amplitude list, or {"sites": [[...], ...]} on a lattice."""
    if isinstance(value, dict):
        if lattice is None:
            errors.add(path, "site-list states require a lattice section")
            return None
        sites = value.get("sites")
        if not isinstance(sites, list) or not sites:
            errors.add(f"{path}.sites", "must be a non-empty list of site tuples")
            return None
        amps = np.zeros(dim, dtype=np.complex128)
        for i, conf in enumerate(sites):
            try:
                amps[basis_index(lattice, [int(s) for s in conf])] += 1.0
            except (QMonitorError, TypeError, ValueError) as exc:
                errors.add(f"{path}.sites[{i}]", str(exc))
                return None
        return QuantumState.from_amplitudes(amps)
    vec = _vector(value, path, errors, dim)
    if vec is None:
        return None
    try:
        return QuantumState.from_amplitudes(vec)
    except QMonitorError as exc:
        errors.add(path, str(exc))
        return None


def _initial(value, path, errors, dim, lattice=None, label=""):
    if not isinstance(value, dict):
        errors.add(path, "must be an object with 'state' or 'decomposition'")
        return None
    if ("state" in value) == ("decomposition" in value):
        errors.add(path, "give exactly one of 'state' or 'decomposition'")
        return None
    if "state" in value:
        st = _state(value["state"], f"{path}.state", errors, dim, lattice)
        return None if st is None else Decomposition((1.0,), (st,), label)
    comps = value["decomposition"]
    if not isinstance(comps, list) or not comps:
        errors.add(f"{path}.decomposition", "must be a non-empty list")
        return None
    weights, states = [], []
    for i, comp in enumerate(comps):
        p = f"{path}.decomposition[{i}]"
        if not isinstance(comp, dict):
            errors.add(p, "must be an object with 'weight' and 'state'")
            return None
        w = _number(comp.get("weight"), f"{p}.weight", errors, minimum=0.0)
        st = _state(comp.get("state"), f"{p}.state", errors, dim, lattice)
        if w is None or st is None:
            return None
        weights.append(w)
        states.append(st)
    try:
        return Decomposition(tuple(weights), tuple(states), label)
    except QMonitorError as exc:
        errors.add(f"{path}.decomposition", str(exc))
        return None


def _feedback(value, path, errors, n_channels):
    if value is None:
        return None
    if not isinstance(value, dict):
        errors.add(path, "must be an object")
        return None
    mode = value.get("mode")
    if mode not in ("signal", "mean_field"):
        errors.add(f"{path}.mode", "must be 'signal' or 'mean_field'")
    gain = _number(value.get("gain"), f"{path}.gain", errors)
    chans = value.get("channels")
    if chans is not None:
        if not isinstance(chans, list) or not all(isinstance(c, int) and not isinstance(c, bool) for c in chans):
            errors.add(f"{path}.channels", "must be a list of channel indices")
            chans = None
        elif any(not 0 <= c < n_channels for c in chans):
            errors.add(f"{path}.channels", f"indices must lie in [0, {n_channels})")
            chans = None
    order = value.get("order", "after")
    if order not in ("after", "before"):
        errors.add(f"{path}.order", "must be 'after' or 'before'")
    if mode not in ("signal", "mean_field") or gain is None or order not in ("after", "before"):
        return None
    return FeedbackSpec(mode, gain, tuple(chans) if chans is not None else None, order)


def _section(raw, name, errors, required):
    value = raw.get(name)
    if value is None:
        if required:
            errors.add(name, "section is required for this experiment")
        return None
    if not isinstance(value, dict):
        errors.add(name, "must be an object")
        return None
    return value


_REQUIRED = {
    "me": {"initial", "numerics"},
    "ensemble": {"initial", "ensemble", "numerics"},
    "fwt": {"decompositions", "ensemble", "numerics"},
    "grw": {"lattice", "grw", "initial", "ensemble", "numerics"},
    "csl": {"lattice", "initial", "ensemble", "numerics"},
    "convergence": {"initial", "ensemble", "numerics"},
}


def parse_config(text: str, experiment: str | None = None, seed: int | None = None) -> RunConfig:
    """Parse and validate a JSON run configuration.

    ``experiment`` and ``seed`` override the file (the CLI subcommand and
    ``--seed`` flag). Raises :class:`ConfigError` listing every problem.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["configuration must be a JSON object"])
    raw = copy.deepcopy(raw)
    errors = _Errors()

    kind = raw.get("experiment", experiment)
    if experiment is not None and kind != experiment:
        errors.add("experiment", f"config says {kind!r} but {experiment!r} was requested")
    if kind not in EXPERIMENTS:
        errors.add("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        raise ConfigError(errors.items)
    raw["experiment"] = kind
    required = _REQUIRED[kind]

    known = {"experiment", "model", "lattice", "grw", "initial", "decompositions", "numerics",
             "ensemble", "output"}
    for key in raw:
        if key not in known:
            errors.add(key, "unknown section")

    for name, defaults in DEFAULTS.items():
        sec = raw.get(name)
        if sec is None and name in required:
            continue
        if isinstance(sec, dict):
            for k, v in defaults.items():
                sec.setdefault(k, v)
    if seed is not None:
        raw.setdefault("ensemble", {})
        if isinstance(raw["ensemble"], dict):
            raw["ensemble"]["seed"] = seed

    # --- model / lattice
    model_sec = _section(raw, "model", errors, False)
    lattice_sec = _section(raw, "lattice", errors, "lattice" in required)
    lattice = None
    hamiltonian = None
    channels: list[Channel] = []
    feedback = None
    dim = None
    if lattice_sec is not None and model_sec is not None and (
            "hamiltonian" in model_sec or "channels" in model_sec):
        errors.add("lattice", "lattice and explicit model operators are mutually exclusive")
    elif lattice_sec is not None:
        lattice_sec.setdefault("masses", [1.0])
        lattice_sec.setdefault("sigma", 1.0)
        lattice_sec.setdefault("coupling", 1.0)
        lattice_sec.setdefault("hopping", 0.0)
        n = _number(lattice_sec.get("n_sites"), "lattice.n_sites", errors, minimum=2, integer=True)
        masses = lattice_sec.get("masses")
        if not isinstance(masses, list) or not masses:
            errors.add("lattice.masses", "must be a non-empty list")
            masses = None
        else:
            masses = [_number(m, f"lattice.masses[{i}]", errors, minimum=0.0, exclusive=True)
                      for i, m in enumerate(masses)]
        sigma = _number(lattice_sec.get("sigma"), "lattice.sigma", errors, minimum=0.0, exclusive=True)
        coupling = _number(lattice_sec.get("coupling"), "lattice.coupling", errors, minimum=0.0)
        hopping = _number(lattice_sec.get("hopping"), "lattice.hopping", errors)
        if None not in (n, sigma, coupling, hopping) and masses and None not in masses:
            try:
                lattice = LatticeConfig(n, tuple(masses), sigma, coupling)
                dim = lattice.dim
                hamiltonian = lattice_hopping(lattice, hopping)
            except ConfigError as exc:
                for e in exc.errors:
                    errors.add("lattice", e)
        if model_sec is not None and lattice is not None and kind != "grw":
            feedback = _feedback(model_sec.get("feedback"), "model.feedback", errors, lattice.n_sites)
    elif model_sec is not None:
        dim = _number(model_sec.get("dim"), "model.dim", errors, minimum=2, integer=True)
        if dim is not None:
            if "hamiltonian" in model_sec:
                hamiltonian = _hermitian(model_sec["hamiltonian"], "model.hamiltonian", errors, dim)
            else:
                hamiltonian = HermitianOperator(np.zeros((dim, dim)))
            chans = model_sec.get("channels", [])
            if not isinstance(chans, list):
                errors.add("model.channels", "must be a list")
                chans = []
            for i, ch in enumerate(chans):
                p = f"model.channels[{i}]"
                if not isinstance(ch, dict):
                    errors.add(p, "must be an object with 'operator' and 'coupling'")
                    continue
                op = _hermitian(ch.get("operator"), f"{p}.operator", errors, dim)
                c = _number(ch.get("coupling"), f"{p}.coupling", errors, minimum=0.0)
                if op is not None and c is not None:
                    channels.append(Channel(op, c))
            if kind in ("ensemble", "fwt", "convergence") and not chans:
                errors.add("model.channels", "at least one monitored channel is required")
            feedback = _feedback(model_sec.get("feedback"), "model.feedback", errors, len(chans))
    else:
        errors.add("model", "a model or lattice section is required")

    model = None
    if not errors.items and hamiltonian is not None:
        if kind == "grw":
            grw = _section(raw, "grw", errors, True) or {}
            rate = _number(grw.get("rate"), "grw.rate", errors, minimum=0.0)
            width = _number(grw.get("width"), "grw.width", errors, minimum=0.0, exclusive=True)
            if rate is not None and width is not None:
                model = JumpModel(hamiltonian, rate, width, lattice)
        elif lattice is not None:
            model = csl_model(lattice, hamiltonian, feedback)
        else:
            try:
                model = MonitoringModel(hamiltonian, tuple(channels), feedback)
            except QMonitorError as exc:
                errors.add("model", str(exc))
    if kind in ("me", "convergence") and feedback is not None and feedback.mode == "mean_field":
        errors.add("model.feedback.mode", "mean-field feedback has no master equation")

    # --- numerics
    num = _section(raw, "numerics", errors, "numerics" in required) or {}
    dt = _number(num.get("dt"), "numerics.dt", errors, minimum=0.0, exclusive=True)
    stride = _number(num.get("stride"), "numerics.stride", errors, minimum=1, integer=True)
    me_dt = _number(num.get("me_dt"), "numerics.me_dt", errors, minimum=0.0, exclusive=True)
    steps = T = dt_list = None
    if kind == "convergence":
        T = _number(num.get("T"), "numerics.T", errors, minimum=0.0, exclusive=True)
        dl = num.get("dt_list")
        if not isinstance(dl, list) or len(dl) < 2:
            errors.add("numerics.dt_list", "must list at least two step sizes")
        else:
            dt_list = [_number(v, f"numerics.dt_list[{i}]", errors, minimum=0.0, exclusive=True)
                       for i, v in enumerate(dl)]
            if None not in dt_list and any(b >= a for a, b in zip(dt_list, dt_list[1:])):
                errors.add("numerics.dt_list", "must be strictly descending")
            elif None not in dt_list and T is not None:
                interval = T / 20
                for i, v in enumerate(dt_list):
                    if abs(round(interval / v) * v - interval) > 1e-9 * interval:
                        errors.add(f"numerics.dt_list[{i}]", "must divide the sample interval T/20")
    else:
        steps = _number(num.get("steps"), "numerics.steps", errors, minimum=1, integer=True)

    # --- ensemble
    ens = _section(raw, "ensemble", errors, "ensemble" in required) or {}
    M = _number(ens.get("M", 1000), "ensemble.M", errors, minimum=2, integer=True)
    seed_v = _number(ens.get("seed", 0), "ensemble.seed", errors, minimum=0, integer=True)
    if seed_v is not None and seed_v >= 2 ** 64:
        errors.add("ensemble.seed", "must fit in 64 bits")
    n_boot = _number(ens.get("n_boot", 1000), "ensemble.n_boot", errors, minimum=2, integer=True)

    # --- initial conditions
    initial = decomps = None
    if kind == "fwt":
        sec = _section(raw, "decompositions", errors, True)
        if sec is not None and dim is not None:
            if set(sec) != {"A", "B"}:
                errors.add("decompositions", "must contain exactly the keys 'A' and 'B'")
            else:
                a = _initial(sec["A"], "decompositions.A", errors, dim, lattice, "A")
                b = _initial(sec["B"], "decompositions.B", errors, dim, lattice, "B")
                if a is not None and b is not None:
                    if np.max(np.abs(a.density_matrix().entries - b.density_matrix().entries)) > 1e-10:
                        errors.add("decompositions", "A and B must mix to the same density matrix")
                    decomps = (a, b)
    elif "initial" in raw:
        if dim is not None:
            initial = _initial(raw["initial"], "initial", errors, dim, lattice)
    elif "initial" in required:
        errors.add("initial", "section is required for this experiment")

    out = _section(raw, "output", errors, False)
    out_dir = out.get("dir") if out else None
    if out_dir is not None and not isinstance(out_dir, str):
        errors.add("output.dir", "must be a string")

    if errors.items:
        raise ConfigError(errors.items)
    return RunConfig(kind, model, initial, dt, steps, stride, me_dt, M, seed_v, n_boot, decomps,
                     dt_list, T, lattice, out_dir, raw)


def load_config(path, experiment: str | None = None, seed: int | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), experiment, seed)


# ---------------------------------------------------------------------------
# Results


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_timeseries(path, rows) -> None:
    """Rows are (time, observable id, mean, se); numbers use 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "observable", "mean", "se"])
        for t, name, mean, se in rows:
            w.writerow([_fmt(t), name, _fmt(mean), _fmt(se)])


def read_timeseries(path) -> list[tuple[float, str, float, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        next(r)
        return [(float(t), name, float(m), float(s)) for t, name, m, s in r]


def write_flashes(path, flashes) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "particle", "center", "trajectory"])
        for f in sorted(flashes, key=lambda f: (f.trajectory, f.time)):
            w.writerow([_fmt(f.time), f.particle, f.center, f.trajectory])


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def write_summary(path, summary: dict) -> dict:
    """Write the JSON summary and return exactly what was serialized."""
    doc = _jsonable(summary)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n",
                          encoding="utf-8")
    return doc


def write_results(result: dict, out_dir) -> dict[str, Path]:
    """Write the files of one experiment into ``out_dir``.

    ``result`` has keys ``timeseries`` (rows), ``summary`` (JSON-able dict)
    and optionally ``flashes``. Returns the written paths by kind.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"timeseries": out / "timeseries.csv", "summary": out / "summary.json"}
        write_timeseries(paths["timeseries"], result.get("timeseries", []))
        write_summary(paths["summary"], result["summary"])
        if result.get("flashes") is not None:
            paths["flashes"] = out / "flashes.csv"
            write_flashes(paths["flashes"], result["flashes"])
    except OSError as exc:
        raise OSError(f"cannot write results to {exc.filename or out}: {exc.strerror}") from exc
    return paths
