"""Command-line entry point: ``kernelcrit simulate|fit|test|matrix|power|report``.

Every subcommand prints a one-line JSON summary on success.  Failures exit
with status 1 and print ``{"error": ..., "message": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .criticism import ilr_test, llrt_pvalue_mean
from .harness import (PARAMETER_SETS, ExperimentConfig, PowerConfig, estimate_latent_power, population_for,
                      report, run_matrix, simulate_dataset, sub_seed)
from .inference import PriorSpec, run_chain
from .io import read_chain, read_observed, write_chain, write_event_log, write_json, write_population
from .model import truncate

log = logging.getLogger("kernelcrit")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config, args.set or ())
    if args.seed is not None:
        cfg = cfg.set("seed", str(args.seed))
    if args.threads is not None:
        cfg = cfg.set("threads", str(args.threads))
    return cfg


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_simulate(args, cfg: ExperimentConfig) -> dict:
    out = _out(args, "simulated")
    pop = population_for(cfg)
    write_population(out / "population.csv", pop)
    reps = []
    for k in range(args.replicates):
        run_cfg = cfg.set("seed", str(sub_seed(cfg.seed, "replicate", k))) if args.replicates > 1 else cfg
        ds = simulate_dataset(run_cfg, args.params, pop)
        traj = ds.trajectory
        cuts = {f"{w:g}": truncate(traj, w)[1] for w in (1.0, 0.7, 0.4)}
        if args.stop_fraction < 1.0:
            traj = traj.censor(truncate(traj, args.stop_fraction)[1])
        name = f"replicate_{k:03d}.csv"
        write_event_log(out / name, traj)
        reps.append({"file": name, "seed": ds.seed, "reseeds": ds.reseeds, "final_size": ds.trajectory.n_infected,
                     "t_max": traj.t_max, "t_cut": cuts})
    write_json(out / "manifest.json", {"params": PARAMETER_SETS[args.params].to_dict(), "tag": args.params,
                                       "n_hosts": cfg.n_hosts, "region_side": cfg.region_side,
                                       "stop_fraction": args.stop_fraction, "seed": cfg.seed, "replicates": reps})
    return {"out": str(out), "replicates": len(reps)}


def cmd_fit(args, cfg: ExperimentConfig) -> dict:
    out = _out(args, "chains")
    y = read_observed(args.obs, args.t_max, cfg.region_side)
    n_iter = args.iters or cfg.n_iter
    summary = []
    for c in range(args.chains):
        seed = sub_seed(cfg.seed, "chain", c)
        res = run_chain(y, PriorSpec(), args.kernel, n_iter, thin=args.thin, seed=seed, burnin=args.burnin,
                        moves_per_iter=cfg.moves_per_iter)
        d = out / f"chain_{c:02d}" if args.chains > 1 else out
        write_chain(d, res, y, {"seed": seed, "n_iter": n_iter, "obs": str(args.obs)})
        summary.append({"dir": str(d), "n_samples": len(res), "acceptance": res.acceptance})
    return {"chains": summary}


def _chain_dirs(path: Path) -> list[Path]:
    if (path / "manifest.json").exists():
        return [path]
    dirs = sorted(p for p in path.iterdir() if (p / "manifest.json").exists())
    if not dirs:
        raise FileNotFoundError(f"no chain output under {path}")
    return dirs


def cmd_test(args, cfg: ExperimentConfig) -> dict:
    samples = []
    for d in _chain_dirs(Path(args.chains)):
        s, _ = read_chain(d)
        samples += s
    if args.max_samples and len(samples) > args.max_samples:
        idx = np.linspace(0, len(samples) - 1, args.max_samples).round().astype(int)
        samples = [samples[k] for k in idx]
    rng = np.random.default_rng(cfg.seed)
    M0 = samples[0].params.family.value
    meta = dict(dataset=args.dataset or "", window=args.window, seed=cfg.seed)
    if args.test == "ilr":
        rep = ilr_test(samples, rng, threads=cfg.threads, M0=M0, M1=args.alt_kernel, **meta)
    else:
        rep = llrt_pvalue_mean(samples, M0, args.alt_kernel, args.test.split("-")[1], rng,
                               args.draws_per_sample, threads=cfg.threads, **meta)
    path = Path(args.out or "report.json")
    write_json(path, rep.to_dict())
    return {"out": str(path), "test": rep.test, "E_hat_p": rep.E_hat_p, "n_samples": rep.n_samples,
            "n_dropped": rep.n_dropped}


def cmd_matrix(args, cfg: ExperimentConfig) -> dict:
    out = _out(args, "results")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    reports = run_matrix(cfg, out)
    man = report(out, svg=not args.no_svg)
    return {"out": str(out), "reports": len(reports), "cells_ok": man["n_cells_ok"],
            "cells_failed": man["n_cells_failed"]}


def cmd_power(args, cfg: ExperimentConfig) -> dict:
    toy = PowerConfig(n_hosts=args.hosts)
    latent, direct = estimate_latent_power(toy, args.alpha_level, args.replicates, cfg.seed)
    res = {"latent": latent.to_dict(), "direct": direct.to_dict(), "seed": cfg.seed, "n_hosts": toy.n_hosts}
    path = Path(args.out or "power.json")
    write_json(path, res)
    return {"out": str(path), "latent": latent.beta_hat, "direct": direct.beta_hat}


def cmd_report(args, cfg: ExperimentConfig) -> dict:
    out = _out(args, "results")
    man = report(out, svg=not args.no_svg)
    return {"out": str(out), "cells_ok": man["n_cells_ok"], "files": man["files"]}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands accept the global flags too; SUPPRESS keeps them from
    # overwriting values given before the subcommand name
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", help="key = value config file", **kw)
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key", **kw)
    g.add_argument("--seed", type=int, **kw)
    g.add_argument("--out", **kw)
    g.add_argument("--threads", type=int, **kw)
    g.add_argument("-v", "--verbose", action="store_true", **kw)
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(True)
    ap = argparse.ArgumentParser(prog="kernelcrit", parents=[_global_flags(False)],
                                 description="Spatial SEIR simulation, inference and latent model criticism.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate epidemics to event-log CSVs")
    p.add_argument("--params", choices=sorted(PARAMETER_SETS), default="original")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--stop-fraction", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="run the data-augmented MCMC on observed data")
    p.add_argument("--obs", required=True)
    p.add_argument("--kernel", choices=("exp", "pow", "gauss"), required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--t-max", type=float, help="end of observation (default: last observed event)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", parents=[common], help="latent test on chain output")
    p.add_argument("--chains", required=True)
    p.add_argument("--test", choices=("ilr", "llr-full", "llr-partial"), required=True)
    p.add_argument("--alt-kernel", choices=("exp", "pow", "gauss"), default="exp")
    p.add_argument("--draws-per-sample", type=int, default=1)
    p.add_argument("--max-samples", type=int)
    p.add_argument("--dataset")
    p.add_argument("--window", type=float, default=1.0)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("matrix", parents=[common], help="full test matrix and tables")
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("power", parents=[common], help="latent versus direct power on a toy setting")
    p.add_argument("--alpha-level", type=float, default=0.05)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--hosts", type=int, default=15)
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("report", parents=[common], help="render tables from a results directory")
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        result = args.func(args, cfg)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
