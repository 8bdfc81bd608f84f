"""Experiment orchestration: datasets, the test matrix, the power experiment and reports.

Results live in one directory::

    out/
      datasets/<tag>/{population.csv, events.csv, window_<pct>.csv, manifest.json}
      cells/<table>__<tag>__<M0>__<M1>__<pct>.json
      index.json
      table2.csv, table3.csv, barchart_<tag>.csv, barchart_<tag>.svg, manifest.json

Every cell derives its own seed from the master seed and its id, so any cell
can be replayed alone and the tables do not depend on execution order.
"""
from __future__ import annotations

import configparser
import csv
import io as _io
import logging
import math
import platform
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .criticism import TestReport, ilr_test, llrt_pvalue_mean
from .inference import PriorSpec, run_chain
from .io import atomic_write_text, read_json, write_event_log, write_json, write_population
from .likelihood import full_loglik
from .model import HostPopulation, KernelFamily, KernelSpec, ModelParams, Trajectory, truncate, window_count
from .simulator import EpidemicExtinct, simulate

log = logging.getLogger(__name__)

ORIGINAL = ModelParams(0.001, 3.0, KernelSpec(KernelFamily.EXPONENTIAL, 0.03), 5.0, 2.5, 1.772, 0.858)

#: data-generating parameter sets, all with the exponential kernel
PARAMETER_SETS = {
    "original": ORIGINAL,
    "alpha_x2": replace(ORIGINAL, alpha=0.002),
    "beta_x2": replace(ORIGINAL, beta=6.0),
    "kappa_x2": replace(ORIGINAL, kernel=KernelSpec(KernelFamily.EXPONENTIAL, 0.06)),
}

DATASET_LABELS = {"original": "Original", "alpha_x2": "alpha x2", "beta_x2": "beta x2", "kappa_x2": "kappa x2"}

TABLE_HEADER = ["dataset", "M0", "window_pct", "ilr_Ep", "llr_full_Ep", "llr_partial_Ep"]
#: row order of fitted kernels in the tables
FAMILY_ORDER = {"pow": 0, "gauss": 1, "exp": 2}
TEST_COLUMNS = {"ILR": "ilr_Ep", "LLR-full": "llr_full_Ep", "LLR-partial": "llr_partial_Ep"}


def _split(v: str) -> tuple:
    return tuple(s.strip() for s in v.split(",") if s.strip())


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_int(v: str):
    return None if v.strip().lower() in ("", "none", "auto") else int(v)


@dataclass
class ExperimentConfig:
    """Settings of a full experiment; every field is a key of the config file.

    The file is plain ``key = value`` lines (``#`` comments allowed); lists are
    comma separated.  Defaults reproduce the desk-scale study.
    """

    n_hosts: int = 150
    region_side: float = 2000.0
    datasets: tuple = ("original", "alpha_x2", "beta_x2", "kappa_x2")
    fitted: tuple = ("pow", "gauss")
    alternative: str = "exp"
    windows: tuple = (1.0, 0.7, 0.4)
    tests: tuple = ("ILR", "LLR-full", "LLR-partial")
    control: bool = True
    control_dataset: str = "original"
    control_alternative: str = "gauss"
    n_iter: int = 2000
    burnin: int | None = None
    test_samples: int = 100
    moves_per_iter: int | None = None
    draws_per_sample: int = 1
    seed: int = 20240601
    placement_seed: int | None = None
    max_reseeds: int = 20
    threads: int = 1

    _parsers = {
        "n_hosts": int, "region_side": float, "datasets": _split, "fitted": _split, "alternative": str.strip,
        "windows": lambda v: tuple(float(x) for x in _split(v)), "tests": _split, "control": _bool,
        "control_dataset": str.strip, "control_alternative": str.strip, "n_iter": int, "burnin": _opt_int,
        "test_samples": int, "moves_per_iter": _opt_int, "draws_per_sample": int, "seed": int,
        "placement_seed": _opt_int, "max_reseeds": int, "threads": int,
    }

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for tag in self.datasets:
            if tag not in PARAMETER_SETS:
                raise ValueError(f"unknown dataset tag {tag!r}; choose from {sorted(PARAMETER_SETS)}")
        for f in (*self.fitted, self.alternative, self.control_alternative):
            KernelFamily(f)
        for w in self.windows:
            if not 0 < w <= 1:
                raise ValueError("window fractions must lie in (0, 1]")
        for t in self.tests:
            if t not in TEST_COLUMNS:
                raise ValueError(f"unknown test {t!r}")
        if self.n_hosts < 2 or self.n_iter < 1 or self.test_samples < 1:
            raise ValueError("n_hosts >= 2, n_iter >= 1 and test_samples >= 1 are required")

    def set(self, key: str, value: str) -> "ExperimentConfig":
        """Copy with one field parsed from its text form."""
        key = key.strip().replace("-", "_")
        if key not in self._parsers:
            raise KeyError(f"unknown config key {key!r}")
        return replace(self, **{key: self._parsers[key](value)})

    @classmethod
    def from_text(cls, text: str, overrides=()) -> "ExperimentConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        cp.optionxform = str
        cp.read_string("[kernelcrit]\n" + text)
        cfg = cls()
        for k, v in cp["kernelcrit"].items():
            cfg = cfg.set(k, v)
        for item in overrides:
            k, sep, v = item.partition("=")
            if not sep:
                raise ValueError(f"override {item!r} is not key=value")
            cfg = cfg.set(k, v)
        return cfg

    @classmethod
    def from_file(cls, path=None, overrides=()) -> "ExperimentConfig":
        text = Path(path).read_text() if path else ""
        return cls.from_text(text, overrides)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    def to_text(self) -> str:
        out = []
        for k, v in self.to_dict().items():
            v = ", ".join(map(str, v)) if isinstance(v, list) else ("none" if v is None else v)
            out.append(f"{k} = {v}")
        return "\n".join(out) + "\n"


def sub_seed(master: int, *labels) -> int:
    """Deterministic 63-bit seed for a labelled piece of work."""
    words = [int(master) & 0xFFFFFFFF, int(master) >> 32] + [zlib.crc32(str(x).encode()) for x in labels]
    return int(np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def window_pct(fraction: float, n: int) -> float:
    """Percentage of hosts infectious at the cut, as realised on ``n`` hosts."""
    return round(100.0 * window_count(fraction, n) / n, 6)


def _pct_label(fraction: float, n: int) -> str:
    return f"{window_pct(fraction, n):g}"


# --------------------------------------------------------------------------- datasets


@dataclass
class Dataset:
    tag: str
    params: ModelParams
    trajectory: Trajectory
    seed: int
    reseeds: int = 0
    windows: dict = field(default_factory=dict)  # fraction -> (ObservedData, t_cut)


def population_for(cfg: ExperimentConfig) -> HostPopulation:
    pseed = cfg.seed if cfg.placement_seed is None else cfg.placement_seed
    return HostPopulation.uniform(cfg.n_hosts, cfg.region_side, np.random.default_rng(sub_seed(pseed, "placement")))


def simulate_dataset(cfg: ExperimentConfig, tag: str, pop: HostPopulation | None = None) -> Dataset:
    """Full-infection epidemic for one parameter set, reseeding on extinction."""
    pop = pop or population_for(cfg)
    p = PARAMETER_SETS[tag]
    for attempt in range(cfg.max_reseeds + 1):
        seed = sub_seed(cfg.seed, "dataset", tag, attempt)
        try:
            traj = simulate(p, pop, np.random.default_rng(seed))
            break
        except EpidemicExtinct as exc:
            log.warning("dataset %s: %s; reseeding (attempt %d)", tag, exc, attempt + 1)
    else:
        raise EpidemicExtinct(f"dataset {tag}: extinct in all {cfg.max_reseeds + 1} attempts", exc.trajectory)
    ds = Dataset(tag, p, traj, seed, attempt)
    for w in cfg.windows:
        ds.windows[w] = truncate(traj, w)
    return ds


def generate_datasets(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Simulate every configured dataset; with ``out_dir``, write event logs and window truncations."""
    pop = population_for(cfg)
    out = {}
    for tag in cfg.datasets:
        ds = simulate_dataset(cfg, tag, pop)
        out[tag] = ds
        if out_dir is None:
            continue
        d = Path(out_dir) / "datasets" / tag
        write_population(d / "population.csv", pop)
        write_event_log(d / "events.csv", ds.trajectory)
        wins = {}
        for w, (obs, t_cut) in ds.windows.items():
            name = f"window_{_pct_label(w, cfg.n_hosts)}.csv"
            write_event_log(d / name, obs)
            wins[name] = {"fraction": w, "window_pct": window_pct(w, cfg.n_hosts), "t_cut": t_cut,
                          "n_infectious": obs.n_infected}
        write_json(d / "manifest.json", {
            "tag": tag, "params": ds.params.to_dict(), "seed": ds.seed, "reseeds": ds.reseeds,
            "n_hosts": cfg.n_hosts, "region_side": cfg.region_side, "t_max": ds.trajectory.t_max,
            "final_size": ds.trajectory.n_infected, "windows": wins,
        })
    return out


# --------------------------------------------------------------------------- matrix


@dataclass(frozen=True)
class Cell:
    table: str  # "table2" or "table3"
    dataset: str
    M0: str
    M1: str
    window: float

    def cell_id(self, n: int) -> str:
        return f"{self.table}__{self.dataset}__{self.M0}__{self.M1}__{_pct_label(self.window, n)}"


def matrix_cells(cfg: ExperimentConfig) -> list[Cell]:
    cells = [Cell("table2", tag, m0, cfg.alternative, w)
             for tag in cfg.datasets for m0 in cfg.fitted for w in cfg.windows]
    if cfg.control and cfg.control_dataset in cfg.datasets:
        cells += [Cell("table3", cfg.control_dataset, cfg.alternative, cfg.control_alternative, w)
                  for w in cfg.windows]
    return cells


def run_cell(cfg: ExperimentConfig, cell: Cell, ds: Dataset) -> dict:
    """Fit ``M0`` to one window of one dataset and run every configured test."""
    t0 = time.perf_counter()
    seed = sub_seed(cfg.seed, cell.cell_id(cfg.n_hosts))
    ss = np.random.SeedSequence(seed)
    chain_seed, *test_seeds = ss.spawn(1 + len(cfg.tests))
    obs, t_cut = ds.windows[cell.window]
    burnin = int(0.2 * cfg.n_iter) if cfg.burnin is None else cfg.burnin
    thin = max(1, (cfg.n_iter - burnin) // cfg.test_samples)
    chain = run_chain(obs, PriorSpec(), cell.M0, cfg.n_iter, thin=thin, seed=np.random.default_rng(chain_seed),
                      burnin=burnin, moves_per_iter=cfg.moves_per_iter)
    samples = chain.samples[-cfg.test_samples:]
    meta = dict(dataset=cell.dataset, window=window_pct(cell.window, cfg.n_hosts) / 100, seed=seed)
    reports = []
    for test, tseed in zip(cfg.tests, test_seeds):
        rng = np.random.default_rng(tseed)
        if test == "ILR":
            rep = ilr_test(samples, rng, threads=cfg.threads, M0=cell.M0, M1=cell.M1, **meta)
        else:
            mode = "full" if test == "LLR-full" else "partial"
            rep = llrt_pvalue_mean(samples, cell.M0, cell.M1, mode, rng, cfg.draws_per_sample,
                                   threads=cfg.threads, **meta)
        reports.append(rep)
    post = np.array([s.params.as_vector() for s in samples])
    return {
        "cell": asdict(cell), "status": "ok", "seed": seed, "t_cut": t_cut, "n_infectious": obs.n_infected,
        "window_pct": window_pct(cell.window, cfg.n_hosts),
        "chain": {"n_iter": cfg.n_iter, "burnin": burnin, "thin": thin, "n_samples": len(samples),
                  "acceptance": chain.acceptance, "max_drift": chain.max_drift,
                  "posterior_mean": dict(zip(ModelParams.NAMES, post.mean(axis=0).tolist()))},
        "reports": [r.to_dict() for r in reports],
        "seconds": round(time.perf_counter() - t0, 3),
    }


def run_matrix(cfg: ExperimentConfig, out_dir, datasets: dict | None = None, cells=None) -> list[TestReport]:
    """Run every cell, writing one JSON per cell and an index; failed cells are recorded and skipped."""
    out = Path(out_dir)
    datasets = datasets or generate_datasets(cfg, out)
    cells = matrix_cells(cfg) if cells is None else cells
    index = {"config": cfg.to_dict(), "cells": {}}
    reports = []
    for cell in cells:
        cid = cell.cell_id(cfg.n_hosts)
        try:
            res = run_cell(cfg, cell, datasets[cell.dataset])
            reports += [TestReport.from_dict(r) for r in res["reports"]]
        except Exception as exc:  # one failed cell must not abort the matrix
            log.exception("cell %s failed", cid)
            res = {"cell": asdict(cell), "status": "failed", "error": f"{type(exc).__name__}: {exc}",
                   "seed": sub_seed(cfg.seed, cid)}
        write_json(out / "cells" / f"{cid}.json", res)
        index["cells"][cid] = {"status": res["status"], "file": f"cells/{cid}.json"}
        write_json(out / "index.json", index)
        log.info("cell %s: %s", cid, res["status"])
    write_json(out / "index.json", index)
    return reports


# --------------------------------------------------------------------------- power


@dataclass
class PowerConfig:
    """Toy setting for comparing latent and direct test power.

    Both hypotheses are simple: ``null`` (exponential kernel) and ``alt``
    (power-law kernel) are fixed parameter vectors, and the null prior is a
    point mass.  Observation stops at ``horizon``.
    """

    n_hosts: int = 15
    region_side: float = 40.0
    null: ModelParams = replace(ORIGINAL, alpha=0.01, beta=1.0, kernel=KernelSpec(KernelFamily.EXPONENTIAL, 0.15))
    alt: ModelParams = replace(ORIGINAL, alpha=0.01, beta=1.5, kernel=KernelSpec(KernelFamily.POWER_LAW, 1.0))
    horizon: float = 30.0
    n_reference: int = 2000
    n_iter: int = 400
    imputations: int = 50

    def __post_init__(self):
        if self.n_hosts > 20:
            raise ValueError("the power experiment is nested Monte Carlo; use at most 20 hosts")


@dataclass
class PowerEstimate:
    alpha_level: float
    beta_hat: float
    mode: str  # "latent-x" or "direct-y"
    replicates: int
    standard_error: float
    values: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("values")
        return d


def _simple_log_T(cfg: PowerConfig, x: Trajectory) -> float:
    return full_loglik(cfg.null, x) - full_loglik(cfg.alt, x)


def _null_without_infection(cfg: PowerConfig, pop: HostPopulation, rng, max_tries: int = 100_000) -> Trajectory:
    for _ in range(max_tries):
        x = simulate(cfg.null, pop, rng, stop=cfg.horizon)
        if x.n_infected == 0:
            return x
    raise RuntimeError("could not sample a null trajectory without infections")


def null_reference(cfg: PowerConfig, pop: HostPopulation, rng) -> np.ndarray:
    """Sorted ``log T`` of trajectories simulated under the null to the horizon."""
    return np.sort([_simple_log_T(cfg, simulate(cfg.null, pop, rng, stop=cfg.horizon))
                    for _ in range(cfg.n_reference)])


def reference_pvalue(ref: np.ndarray, log_t: float) -> float:
    """Null probability of a smaller statistic, ties counted one half."""
    lo = np.searchsorted(ref, log_t, side="left")
    hi = np.searchsorted(ref, log_t, side="right")
    return float((lo + 0.5 * (hi - lo)) / len(ref))


def estimate_latent_power(toy_cfg: PowerConfig, alpha_level: float, replicates: int, rng=None,
                          pop: HostPopulation | None = None):
    """Latent and direct power of the likelihood-ratio test of ``null`` against ``alt``.

    For each replicate a trajectory is simulated under ``alt`` and its
    infection/removal times up to the horizon form ``y``.  The direct test
    uses the complete trajectory; the latent test imputes exposures under the
    null (point-mass prior) and averages the indicator ``p_x < alpha_level``.

    Returns ``(latent, direct)`` PowerEstimates.
    """
    rng = np.random.default_rng(rng)
    cfg = toy_cfg
    pop = pop or HostPopulation.uniform(cfg.n_hosts, cfg.region_side, rng)
    ref = null_reference(cfg, pop, rng)
    priors = PriorSpec.point_mass(cfg.null)
    gam, direct = [], []
    burnin = cfg.n_iter // 5
    thin = max(1, (cfg.n_iter - burnin) // cfg.imputations)
    for _ in range(replicates):
        x = simulate(cfg.alt, pop, rng, stop=cfg.horizon)
        direct.append(float(reference_pvalue(ref, _simple_log_T(cfg, x)) < alpha_level))
        y = x.observed()
        if y.n_infected == 0:
            # nothing observed: x | y is the null law restricted to no infections by the horizon
            xs = [_null_without_infection(cfg, pop, rng) for _ in range(cfg.imputations)]
        else:
            chain = run_chain(y, priors, cfg.null.kernel, cfg.n_iter, thin=thin, burnin=burnin,
                              seed=rng, init=cfg.null)
            xs = [s.aug for s in chain.samples[-cfg.imputations:]]
        ps = np.array([reference_pvalue(ref, _simple_log_T(cfg, xi)) for xi in xs])
        gam.append(float(np.mean(ps < alpha_level)))

    def est(v, mode):
        v = np.asarray(v)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        return PowerEstimate(alpha_level, float(v.mean()), mode, len(v), se, v.tolist())

    return est(gam, "latent-x"), est(direct, "direct-y")


# --------------------------------------------------------------------------- report


def _fmt_p(v) -> str:
    return "" if v is None else f"{float(v):.6f}"


def _load_cells(out: Path) -> list[dict]:
    idx = out / "index.json"
    if not idx.exists():
        return []
    cells = []
    for cid, entry in sorted(read_json(idx)["cells"].items()):
        if entry["status"] != "ok":
            continue
        cells.append(read_json(out / entry["file"]))
    return cells


def _rows(cells: list[dict], table: str, order: dict) -> list[list[str]]:
    rows = []
    for c in cells:
        if c["cell"]["table"] != table:
            continue
        ep = {TEST_COLUMNS[r["test"]]: r["E_hat_p"] for r in c["reports"]}
        fam = FAMILY_ORDER.get(c["cell"]["M0"], 9), FAMILY_ORDER.get(c["cell"]["M1"], 9)
        key = (order.get(c["cell"]["dataset"], 99), *fam, -c["window_pct"])
        rows.append((key, [c["cell"]["dataset"], c["cell"]["M0"],
                           f"{c['window_pct']:g}", *(_fmt_p(ep.get(col)) for col in TABLE_HEADER[3:])]))
    return [r for _, r in sorted(rows)]


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def barchart_svg(rows: list[list[str]], title: str) -> str:
    """Grouped bar chart of the three E(p) columns, one group per (M0, window) row."""
    width, height, pad = 80 + 90 * max(1, len(rows)), 300, 50
    colors = ("#4c72b0", "#dd8452", "#55a868")
    plot_h = height - 2 * pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
             f'font-size="11">', f'<text x="{width / 2}" y="18" text-anchor="middle">{title}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - 10}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = height - pad - tick * plot_h
        parts.append(f'<text x="{pad - 5}" y="{y + 4:.1f}" text-anchor="end">{tick:g}</text>')
    for g, row in enumerate(rows):
        x0 = pad + 10 + 90 * g
        for k, v in enumerate(row[3:6]):
            if v == "":
                continue
            h = float(v) * plot_h
            parts.append(f'<rect x="{x0 + 22 * k}" y="{height - pad - h:.2f}" width="20" height="{h:.2f}" '
                         f'fill="{colors[k]}"/>')
        parts.append(f'<text x="{x0 + 33}" y="{height - pad + 15}" text-anchor="middle">{row[1]} ({row[2]})</text>')
    for k, name in enumerate(("ILR", "LLR full", "LLR partial")):
        parts.append(f'<rect x="{width - 110}" y="{30 + 15 * k}" width="10" height="10" fill="{colors[k]}"/>'
                     f'<text x="{width - 95}" y="{39 + 15 * k}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def report(out_dir, svg: bool = True, extra_manifest: dict | None = None) -> dict:
    """Render tables, bar-chart data and a run manifest from the cell files in ``out_dir``.

    Re-running on the same directory rewrites identical CSV files.
    """
    out = Path(out_dir)
    cells = _load_cells(out)
    order = {t: k for k, t in enumerate(PARAMETER_SETS)}
    t2 = _rows(cells, "table2", order)
    t3 = _rows(cells, "table3", order)
    atomic_write_text(out / "table2.csv", _csv_text(TABLE_HEADER, t2))
    atomic_write_text(out / "table3.csv", _csv_text(TABLE_HEADER, t3))
    files = ["table2.csv", "table3.csv"]
    for tag in sorted({r[0] for r in t2}, key=lambda t: order.get(t, 99)):
        rows = [r for r in t2 if r[0] == tag]
        atomic_write_text(out / f"barchart_{tag}.csv", _csv_text(TABLE_HEADER, rows))
        files.append(f"barchart_{tag}.csv")
        if svg:
            atomic_write_text(out / f"barchart_{tag}.svg", barchart_svg(rows, DATASET_LABELS.get(tag, tag)))
            files.append(f"barchart_{tag}.svg")
    idx = read_json(out / "index.json") if (out / "index.json").exists() else {"config": None, "cells": {}}
    manifest = {
        "config": idx["config"],
        "cells": {cid: {"status": e["status"], "seed": read_json(out / e["file"]).get("seed")}
                  for cid, e in sorted(idx["cells"].items())},
        "n_cells_ok": len(cells),
        "n_cells_failed": sum(e["status"] != "ok" for e in idx["cells"].values()),
        "seconds": round(sum(c.get("seconds", 0.0) for c in cells), 3),
        "versions": {"kernelcrit": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "files": files,
    }
    manifest.update(extra_manifest or {})
    write_json(out / "manifest.json", manifest)
    return manifest
