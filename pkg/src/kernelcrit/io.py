"""File formats: event logs, populations, chain output and JSON documents.

Times are written with ``repr`` so every float round-trips exactly; an empty
field means the event is censored or never happens.
"""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .inference import ChainResult, ChainState
from .model import NEVER, HostPopulation, InvalidTrajectory, KernelFamily, ModelParams, ObservedData, Trajectory

EVENT_HEADER = ["host_id", "x", "y", "exposure_time", "infection_time", "removal_time"]
POPULATION_HEADER = ["host_id", "x", "y"]
CHAIN_HEADER = ["iteration", *ModelParams.NAMES, "log_posterior", "n_occult"]


def fmt(v: float) -> str:
    v = float(v)
    return repr(v) if math.isfinite(v) else ""


def _time(s: str) -> float:
    s = s.strip()
    return NEVER if s == "" else float(s)


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_rows(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path, header):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        head = next(rd, None)
        if head != header:
            raise InvalidTrajectory(f"{path}: expected header {','.join(header)}, got {head}")
        rows = [r for r in rd if r]
    ids = [int(r[0]) for r in rows]
    if sorted(ids) != list(range(len(ids))):
        raise InvalidTrajectory(f"{path}: host ids must be 0..N-1")
    return [rows[k] for k in np.argsort(ids)]


def write_population(path, pop: HostPopulation) -> None:
    _write_rows(path, POPULATION_HEADER, ([k, fmt(x), fmt(y)] for k, (x, y) in enumerate(pop.coords)))


def read_population(path, region_side: float = 2000.0) -> HostPopulation:
    rows = _read_rows(path, POPULATION_HEADER)
    return HostPopulation(np.array([[float(r[1]), float(r[2])] for r in rows]), region_side)


def write_event_log(path, data: Trajectory | ObservedData) -> None:
    """One row per host; exposures of ObservedData are written empty (hidden)."""
    coords = data.population.coords
    e = data.exposure if isinstance(data, Trajectory) else np.full(data.n, NEVER)
    rows = ([k, fmt(coords[k, 0]), fmt(coords[k, 1]), fmt(e[k]), fmt(data.infection[k]), fmt(data.removal[k])]
            for k in range(data.n))
    _write_rows(path, EVENT_HEADER, rows)


def _read_events(path, region_side):
    rows = _read_rows(path, EVENT_HEADER)
    coords = np.array([[float(r[1]), float(r[2])] for r in rows]).reshape(-1, 2)
    e, i, r = (np.array([_time(row[c]) for row in rows]) for c in (3, 4, 5))
    return HostPopulation(coords, region_side), e, i, r


def read_event_log(path, t_max: float | None = None, region_side: float = 2000.0, seeds=()) -> Trajectory:
    """Complete trajectory; ``t_max`` defaults to the last recorded event."""
    pop, e, i, r = _read_events(path, region_side)
    if t_max is None:
        fin = np.concatenate([a[np.isfinite(a)] for a in (e, i, r)])
        t_max = float(fin.max()) if len(fin) else 0.0
    traj = Trajectory(pop, e, i, r, t_max, seeds)
    traj.validate()
    return traj


def read_observed(path, t_max: float | None = None, region_side: float = 2000.0, seeds=()) -> ObservedData:
    """Observed data from an event log; any exposure column content is ignored."""
    pop, _, i, r = _read_events(path, region_side)
    if t_max is None:
        fin = np.concatenate([a[np.isfinite(a)] for a in (i, r)])
        t_max = float(fin.max()) if len(fin) else 0.0
    y = ObservedData(pop, i, r, t_max, seeds)
    y.validate()
    return y


# --------------------------------------------------------------------------- chains


def write_chain(out_dir, result: ChainResult, y: ObservedData, meta: dict | None = None) -> Path:
    """Chain CSV, observed data, exposure sidecar and a JSON manifest in ``out_dir``.

    The sidecar ``exposures.npy`` has one row per retained sample (NaN-free;
    never-exposed hosts are ``inf``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ([s.iteration, *map(fmt, s.params.as_vector()), fmt(s.log_posterior), s.n_occult] for s in result)
    _write_rows(out / "chain.csv", CHAIN_HEADER, rows)
    write_event_log(out / "observed.csv", y)
    np.save(out / "exposures.npy", np.array([s.aug.exposure for s in result]).reshape(len(result), y.n))
    first = result.samples[0].params if len(result) else None
    manifest = {
        "kernel": first.family.value if first else None,
        "n_samples": len(result),
        "burnin": result.burnin,
        "thin": result.thin,
        "acceptance": result.acceptance,
        "scales": result.scales,
        "max_drift": result.max_drift,
        "t_max": y.t_max,
        "region_side": y.population.region_side,
        "seeds": list(y.seeds),
        "files": {"chain": "chain.csv", "observed": "observed.csv", "exposures": "exposures.npy"},
    }
    manifest.update(meta or {})
    write_json(out / "manifest.json", manifest)
    return out


def read_chain(chain_dir) -> tuple[list[ChainState], dict]:
    d = Path(chain_dir)
    man = read_json(d / "manifest.json")
    files = man["files"]
    y = read_observed(d / files["observed"], man["t_max"], man["region_side"], man["seeds"])
    E = np.load(d / files["exposures"])
    family = KernelFamily(man["kernel"])
    with open(d / files["chain"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    states = []
    for row, e in zip(rows, E):
        p = ModelParams.from_vector(family, [float(row[n]) for n in ModelParams.NAMES])
        aug = Trajectory(y.population, e, y.infection, y.removal, y.t_max, y.seeds)
        states.append(ChainState(p, aug, float(row["log_posterior"]), int(row["iteration"])))
    return states, man
