"""Maximum-likelihood fits of the alternative model.

Nelder-Mead on log-transformed parameters with jittered restarts.  The full
log-likelihood separates into an infection block (alpha, beta, kappa) and two
sojourn blocks (mean, variance of E and of I), so each block is maximised on
its own; the joint maximiser is the concatenation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..likelihood import InfectionStats, PartialData, PartialStats, fsum
from ..model import KernelFamily, ModelParams, Trajectory
from ..sojourn import gamma_logpdf, gamma_logsf

RESTARTS = 5
JITTER = 0.5
XATOL = 1e-8
MAX_EVALS = 10_000

#: log10 ranges searched for a starting kappa, per family
KAPPA_GRID = {
    KernelFamily.EXPONENTIAL: (-5.0, 1.0),
    KernelFamily.POWER_LAW: (-1.5, 1.5),
    KernelFamily.GAUSSIAN: (-9.0, 0.0),
}


@dataclass
class MLEResult:
    theta: dict
    loglik_at_max: float
    converged: bool
    evaluations: int
    family: KernelFamily | None = None
    history_max: float = field(default=-math.inf, repr=False)

    def params(self) -> ModelParams:
        return ModelParams.from_vector(self.family, [self.theta[n] for n in ModelParams.NAMES])


class _Tracked:
    """Objective wrapper that remembers the best point it has seen."""

    def __init__(self, f):
        self.f = f
        self.n = 0
        self.best_x = None
        self.best_v = -math.inf

    def __call__(self, x):
        self.n += 1
        v = self.f(np.asarray(x, dtype=float))
        if v > self.best_v:
            self.best_v, self.best_x = v, np.array(x, dtype=float)
        return -v if math.isfinite(v) else math.inf


def _nelder_mead(f: _Tracked, x0: np.ndarray, rng, restarts: int = RESTARTS, jitter: float = JITTER,
                 xatol: float = XATOL, max_evals: int = MAX_EVALS) -> bool:
    converged = False
    starts = [np.asarray(x0, dtype=float)]
    for _ in range(restarts - 1):
        starts.append(starts[0] + jitter * rng.standard_normal(len(x0)))
    for k, s in enumerate(starts):
        if k:
            # later restarts also try from the best point found so far
            s = s if not np.isfinite(f.best_v) else 0.5 * (s + f.best_x)
        res = minimize(f, s, method="Nelder-Mead",
                       options={"xatol": xatol, "fatol": xatol, "maxfev": max_evals, "adaptive": len(s) > 2})
        converged |= bool(res.success) and math.isfinite(res.fun)
    return converged


def _profile_rates(s: np.ndarray, A: float, B: float, alpha: float, beta: float, iters: int = 200):
    """Maximise sum log(a + b s) - a A - b B over a, b >= 0 by EM (fixed point)."""
    a, b = max(alpha, 1e-12), max(beta, 1e-12)
    with np.errstate(over="ignore", invalid="ignore"):
        return _em(s, A, B, a, b, iters)


def _em(s, A, B, a, b, iters):
    for _ in range(iters):
        rate = a + b * s
        a_new = a * np.sum(1.0 / rate) / A if A > 0 else a
        b_new = b * np.sum(s / rate) / B if B > 0 else b
        if abs(a_new - a) <= 1e-10 * a and abs(b_new - b) <= 1e-10 * b:
            a, b = a_new, b_new
            break
        a, b = max(a_new, 1e-300), max(b_new, 1e-300)
    return a, b


def _kappa_start(stats, family: KernelFamily, alpha: float, beta: float, fixed: dict, n: int = 25):
    """Coarse search for a starting point: grid over kappa, rates profiled out.

    For the full likelihood the rates are profiled by EM; for the partial
    likelihood (beta fixed) alpha is refined on a second grid at the best kappa.
    """
    lo, hi = KAPPA_GRID[family]
    best = (-math.inf, None, alpha, beta)
    profile = isinstance(stats, InfectionStats) and not fixed
    for kappa in np.logspace(lo, hi, n):
        a_hat, b_hat = alpha, beta
        if profile:
            s, b = stats.kernel_sums(family, kappa)
            a_hat, b_hat = _profile_rates(s, stats.susceptible_time, b, alpha, beta)
        v = stats.loglik(family, a_hat, b_hat, kappa)
        if v > best[0]:
            best = (v, float(kappa), a_hat, b_hat)
    if not profile and best[1] is not None and "alpha" not in fixed:
        kappa = best[1]
        for a in alpha * np.logspace(-4, 4, 17):
            v = stats.loglik(family, a, best[3], kappa)
            if v > best[0]:
                best = (v, kappa, float(a), best[3])
    return best


def fit_infection(stats: InfectionStats, family: KernelFamily, init: ModelParams | None, rng,
                  fixed: dict | None = None, **nm) -> MLEResult:
    fixed = dict(fixed or {})
    names = ("alpha", "beta", "kappa")
    start = {"alpha": 1e-3, "beta": 1.0, "kappa": None}
    if init is not None:
        start.update(alpha=init.alpha, beta=init.beta, kappa=init.kappa if init.family == family else None)
    free = [n for n in names if n not in fixed]

    def unpack(x):
        v = dict(fixed)
        v.update(zip(free, np.exp(x)))
        return v

    f = _Tracked(lambda x: stats.loglik(family, **unpack(x)))
    if "kappa" in free:
        a_init = fixed.get("alpha", start["alpha"] or 1e-3)
        b_init = fixed.get("beta", start["beta"] or 1.0)
        _, k0, a0, b0 = _kappa_start(stats, family, a_init, b_init, fixed)
        candidates = [dict(alpha=a0, beta=b0, kappa=k0 or 1.0)]
        if start["kappa"] is not None:
            candidates.append(dict(start))
    else:
        candidates = [dict(start, kappa=fixed.get("kappa", start["kappa"]))]
    x0 = None
    for c in candidates:
        x = np.log([max(c[n], 1e-300) for n in free])
        f(x)
        x0 = f.best_x
    if x0 is None or not len(free):
        v = stats.loglik(family, **unpack(np.empty(0)))
        return MLEResult(unpack(np.empty(0)), v, math.isfinite(v), 1, family, v)
    converged = _nelder_mead(f, x0, rng, **nm)
    ok = np.isfinite(f.best_v)
    return MLEResult(unpack(f.best_x) if ok else unpack(x0), f.best_v, converged and ok, f.n, family, f.best_v)


def sojourn_data(traj: Trajectory, stage: str) -> tuple[np.ndarray, np.ndarray]:
    """Completed and censored sojourn durations for stage ``"e"`` or ``"i"``."""
    e, i, r, T = traj.exposure, traj.infection, traj.removal, traj.t_max
    if stage == "e":
        start, end = e, i
        present = np.isfinite(e) & ~traj.seed_mask
    else:
        start, end = i, r
        present = np.isfinite(i)
    done = present & np.isfinite(end)
    cens = present & ~np.isfinite(end)
    return end[done] - start[done], T - start[cens]


def sojourn_loglik(done: np.ndarray, censored: np.ndarray, mean: float, var: float) -> float:
    return fsum(gamma_logpdf(done, mean, var)) + fsum(gamma_logsf(censored, mean, var))


def fit_sojourn(done: np.ndarray, censored: np.ndarray, rng, init: tuple[float, float] | None = None, **nm) -> MLEResult:
    if init is None:
        if len(done) >= 2 and np.var(done) > 0:
            init = (float(np.mean(done)), float(np.var(done, ddof=1)))
        else:
            m = float(np.mean(np.concatenate([done, censored]))) if len(done) + len(censored) else 1.0
            init = (max(m, 1e-6), max(m, 1e-6) ** 2)
    f = _Tracked(lambda x: sojourn_loglik(done, censored, math.exp(x[0]), math.exp(x[1])))
    x0 = np.log(init)
    f(x0)
    converged = _nelder_mead(f, x0, rng, **nm)
    mean, var = np.exp(f.best_x)
    return MLEResult({"mean": float(mean), "var": float(var)}, f.best_v, converged, f.n, None, f.best_v)


def maximize_loglik(objective: str, data, family: KernelFamily | str, init: ModelParams | None = None,
                    rng=None, fixed: dict | None = None, **nm) -> MLEResult:
    """Maximum-likelihood estimate under the given kernel family.

    Parameters
    ----------
    objective : "full" or "partial"
        ``"full"``: ``data`` is a Trajectory and all seven parameters are
        estimated.  ``"partial"``: ``data`` is PartialData (or PartialStats);
        the partial likelihood depends on alpha and beta only through their
        ratio, so beta is fixed at 1 unless ``fixed`` says otherwise.
    fixed : dict
        Parameters held at given values, e.g. ``{"beta": 0.0}``.

    The returned ``loglik_at_max`` is the best value over every evaluation.
    """
    family = KernelFamily(family)
    rng = np.random.default_rng(rng)
    if objective == "partial":
        stats = data if isinstance(data, PartialStats) else PartialStats(data)
        fx = {"beta": 1.0}
        fx.update(fixed or {})
        if init is not None and "beta" not in (fixed or {}):
            init = ModelParams(init.alpha / init.beta if init.beta > 0 else init.alpha, 1.0, init.kernel,
                               init.mu_e, init.var_e, init.mu_i, init.var_i)
        return fit_infection(_PartialAdapter(stats), family, init, rng, fx, **nm)
    if objective != "full":
        raise ValueError(f"unknown objective {objective!r}")
    stats = data if isinstance(data, InfectionStats) else InfectionStats(data)
    fixed = dict(fixed or {})
    inf_fixed = {k: v for k, v in fixed.items() if k in ("alpha", "beta", "kappa")}
    inf = fit_infection(stats, family, init, rng, inf_fixed, **nm)
    theta = dict(inf.theta)
    total = inf.loglik_at_max
    evals, conv = inf.evaluations, inf.converged
    if isinstance(data, Trajectory):
        for stage in ("e", "i"):
            done, cens = sojourn_data(data, stage)
            keys = (f"mu_{stage}", f"var_{stage}")
            if all(k in fixed for k in keys):
                theta.update({k: fixed[k] for k in keys})
                total += sojourn_loglik(done, cens, fixed[keys[0]], fixed[keys[1]])
                continue
            s0 = (getattr(init, keys[0]), getattr(init, keys[1])) if init is not None else None
            res = fit_sojourn(done, cens, rng, s0, **nm)
            theta.update({keys[0]: res.theta["mean"], keys[1]: res.theta["var"]})
            total += res.loglik_at_max
            evals += res.evaluations
            conv = conv and res.converged
    return MLEResult(theta, total, conv and math.isfinite(total), evals, family, total)


class _PartialAdapter:
    """Presents PartialStats with the InfectionStats interface used by :func:`fit_infection`."""

    def __init__(self, stats: PartialStats):
        self.stats = stats
        self.susceptible_time = 0.0

    def loglik(self, family, alpha, beta, kappa):
        return self.stats.loglik(family, alpha, beta, kappa)

    def kernel_sums(self, family, kappa):
        raise NotImplementedError
