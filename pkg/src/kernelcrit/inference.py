"""Data-augmented reversible-jump MCMC for the spatial SEIR model.

The latent state is the set of exposure times.  Hosts observed to become
infectious have one exposure each whose time is updated by MOVE proposals;
hosts not seen infectious by ``t_max`` may carry an *occult* exposure, which
is created and destroyed by ADD / DELETE proposals.  Parameters are updated
one at a time by random-walk Metropolis on the log scale.

The sampler keeps the kernel-dependent pieces of the log-likelihood in
caches so a single exposure update costs O(N) instead of O(N^2).
"""
from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special

from .likelihood import fsum, loglik_terms
from .model import (NEVER, HostPopulation, InvalidTrajectory, KernelcritError, KernelFamily, KernelSpec,
                    ModelParams, ObservedData, Trajectory, kernel_values)
from .simulator import PRIMARY
from .sojourn import gamma_logpdf, gamma_logsf

log = logging.getLogger(__name__)

PARAM_NAMES = ModelParams.NAMES
TARGET_ACCEPTANCE = 0.23
MOVE, ADD, DELETE = "move", "add", "delete"


class ImpossibleState(KernelcritError):
    pass


# --------------------------------------------------------------------------- priors


@dataclass(frozen=True)
class UniformPositive:
    """Uniform(0, upper); with the default upper bound it acts as a flat prior on (0, inf)."""

    upper: float = sys.float_info.max

    def logpdf(self, x: float) -> float:
        # the normalising constant cancels in every ratio the sampler forms
        return 0.0 if 0 < x < self.upper else -math.inf

    def sample(self, rng) -> float:
        if self.upper >= sys.float_info.max:
            raise ValueError("cannot sample from an improper flat prior")
        return float(rng.uniform(0.0, self.upper))


@dataclass(frozen=True)
class GammaMeanVar:
    mean: float
    var: float

    @property
    def shape(self) -> float:
        return self.mean**2 / self.var

    @property
    def rate(self) -> float:
        return self.mean / self.var

    def logpdf(self, x: float) -> float:
        if not x > 0:
            return -math.inf
        a, b = self.shape, self.rate
        return a * math.log(b) - math.lgamma(a) + (a - 1) * math.log(x) - b * x

    def sample(self, rng) -> float:
        return float(rng.gamma(self.shape, 1.0 / self.rate))


@dataclass(frozen=True)
class Fixed:
    """Point mass: the parameter is held at ``value`` and never updated."""

    value: float

    def logpdf(self, x: float) -> float:
        return 0.0 if x == self.value else -math.inf

    def sample(self, rng) -> float:
        return float(self.value)


@dataclass(frozen=True)
class PriorSpec:
    alpha: object = UniformPositive()
    beta: object = GammaMeanVar(1.0, 100.0)
    kappa: object = GammaMeanVar(1.0, 100.0)
    mu_e: object = UniformPositive()
    var_e: object = UniformPositive()
    mu_i: object = UniformPositive()
    var_i: object = UniformPositive()

    def __getitem__(self, name: str):
        return getattr(self, name)

    def logpdf(self, p: ModelParams) -> float:
        return math.fsum(self[n].logpdf(v) for n, v in zip(PARAM_NAMES, p.as_vector()))

    def sample(self, family: KernelFamily | str, rng=None) -> ModelParams:
        rng = np.random.default_rng(rng)
        return ModelParams.from_vector(family, [self[n].sample(rng) for n in PARAM_NAMES])

    @classmethod
    def point_mass(cls, p: ModelParams) -> "PriorSpec":
        return cls(*(Fixed(float(v)) for v in p.as_vector()))

    @property
    def free(self) -> tuple[int, ...]:
        return tuple(k for k, n in enumerate(PARAM_NAMES) if not isinstance(self[n], Fixed))


# --------------------------------------------------------------------------- state


@dataclass
class ChainState:
    params: ModelParams
    aug: Trajectory
    log_posterior: float
    iteration: int = 0

    @property
    def n_occult(self) -> int:
        a = self.aug
        return int(np.sum(np.isfinite(a.exposure) & ~np.isfinite(a.infection)))


@dataclass(frozen=True)
class SourcedExposure:
    event: int
    host: int
    source: int  # host id or PRIMARY


def log_posterior(p: ModelParams, traj: Trajectory, priors: PriorSpec) -> float:
    lp = priors.logpdf(p)
    if lp == -math.inf:
        return -math.inf
    terms = loglik_terms(p, traj)
    if terms.zero_rate_events:
        return -math.inf
    return terms.total + lp


def _e_logpdf(x: float, a: float, b: float, lg: float) -> float:
    if x <= 0:
        return -math.inf
    return a * math.log(b) - lg + (a - 1) * math.log(x) - b * x


def _e_logsf(x: float, a: float, b: float) -> float:
    v = special.gammaincc(a, b * x)
    return math.log(v) if v > 0 else -math.inf


class _Sampler:
    """Mutable chain state with cached likelihood pieces."""

    def __init__(self, y: ObservedData, params: ModelParams, priors: PriorSpec, exposure: np.ndarray,
                 rng: np.random.Generator, augment: bool = True):
        self.y = y
        self.pop = y.population
        self.D = self.pop.distances
        self.T = y.t_max
        self.i = y.infection.copy()
        self.r = y.removal.copy()
        self.seed_mask = np.zeros(y.n, dtype=bool)
        self.seed_mask[list(y.seeds)] = True
        self.e = np.asarray(exposure, dtype=float).copy()
        self.priors = priors
        self.rng = rng
        self.augment = augment
        # hosts that can carry an infectious period; only these enter kernel sums
        self.inf_idx = np.flatnonzero(np.isfinite(self.i))
        self.i_inf = self.i[self.inf_idx]
        self.rT_inf = np.minimum(self.r[self.inf_idx], self.T)
        self.movable = np.flatnonzero(np.isfinite(self.i) & ~self.seed_mask)
        self.unobserved = np.flatnonzero(~np.isfinite(self.i))
        self.scales = np.full(len(PARAM_NAMES), 0.1)
        self.accepted = {k: 0 for k in list(PARAM_NAMES) + [MOVE, ADD, DELETE]}
        self.proposed = dict.fromkeys(self.accepted, 0)
        self.max_drift = 0.0
        self.set_params(params)

    # -- cache maintenance -------------------------------------------------

    def set_params(self, p: ModelParams) -> None:
        self.p = p
        self._set_kernel(p.kernel)
        self.refresh()

    def _set_kernel(self, kernel: KernelSpec) -> None:
        Kinf = kernel_values(kernel.family, kernel.kappa, self.D[:, self.inf_idx])
        Kinf[self.inf_idx, np.arange(len(self.inf_idx))] = 0.0
        self.Kinf = Kinf

    def _kernel_caches(self, Kinf: np.ndarray):
        """Per-host kernel sum at exposure, and the pair part of the pressure integral."""
        e = self.e
        exposed = np.isfinite(e) & ~self.seed_mask
        t = np.where(exposed, e, -1.0)[:, None]
        live = (self.i_inf[None, :] < t) & (t <= self.r[self.inf_idx][None, :])
        s = np.where(exposed, (Kinf * live).sum(axis=1), 0.0)
        ov = np.maximum(np.minimum(self.rT_inf[None, :], np.minimum(e, self.T)[:, None]) - self.i_inf[None, :], 0.0)
        return s, fsum(Kinf * ov)

    def refresh(self) -> None:
        """Recompute every cache from scratch."""
        self.s, self.B = self._kernel_caches(self.Kinf)
        self.A = fsum(np.minimum(self.e[~self.seed_mask], self.T))
        self.loglik = self._infection_ll(self.p.alpha, self.p.beta, self.s, self.B) + self._e_ll(self.p) + self._i_ll(self.p)
        self.logprior = self.priors.logpdf(self.p)

    def _exposed(self) -> np.ndarray:
        return np.isfinite(self.e) & ~self.seed_mask

    def _infection_ll(self, alpha, beta, s, B) -> float:
        rates = alpha + beta * s[self._exposed()]
        if np.any(rates <= 0):
            return -math.inf
        return fsum(np.log(rates)) - alpha * self.A - beta * B

    def _e_ll(self, p: ModelParams) -> float:
        e, i = self.e, self.i
        exposed = self._exposed()
        done = exposed & np.isfinite(i)
        occ = exposed & ~np.isfinite(i)
        return fsum(gamma_logpdf(i[done] - e[done], p.mu_e, p.var_e)) + fsum(gamma_logsf(self.T - e[occ], p.mu_e, p.var_e))

    def _i_ll(self, p: ModelParams) -> float:
        i, r = self.i, self.r
        inf = np.isfinite(i)
        done = inf & np.isfinite(r)
        cens = inf & ~np.isfinite(r)
        return fsum(gamma_logpdf(r[done] - i[done], p.mu_i, p.var_i)) + fsum(gamma_logsf(self.T - i[cens], p.mu_i, p.var_i))

    @property
    def log_post(self) -> float:
        return self.loglik + self.logprior

    def trajectory(self) -> Trajectory:
        return Trajectory(self.pop, self.e.copy(), self.i.copy(), self.r.copy(), self.T, self.y.seeds)

    def check_drift(self, tol: float = 1e-8) -> float:
        """Compare cached log-posterior with an independent recomputation and resynchronise."""
        ref = log_posterior(self.p, self.trajectory(), self.priors)
        drift = abs(ref - self.log_post) if math.isfinite(ref) else math.inf
        self.max_drift = max(self.max_drift, drift)
        if drift > tol:
            log.warning("log-posterior drift %.3g exceeds %.1g; resynchronising", drift, tol)
        self.refresh()
        return drift

    # -- parameter updates -------------------------------------------------

    def update_params(self, adapt_step: float | None = None) -> None:
        for k in self.priors.free:
            name = PARAM_NAMES[k]
            self.proposed[name] += 1
            acc = self._update_one(k, name)
            self.accepted[name] += acc
            if adapt_step is not None:
                self.scales[k] = math.exp(math.log(self.scales[k]) + adapt_step * (acc - TARGET_ACCEPTANCE))

    def _update_one(self, k: int, name: str) -> bool:
        p = self.p
        old = float(p.as_vector()[k])
        new = old * math.exp(self.scales[k] * self.rng.standard_normal())
        prior = self.priors[name]
        d_prior = prior.logpdf(new) - prior.logpdf(old)
        if d_prior == -math.inf or not (0 < new < math.inf):
            return False
        jac = math.log(new) - math.log(old)
        vec = p.as_vector()
        vec[k] = new
        q = ModelParams.from_vector(p.family, vec)
        if name in ("alpha", "beta"):
            old_ll = self._infection_ll(p.alpha, p.beta, self.s, self.B)
            new_ll = self._infection_ll(q.alpha, q.beta, self.s, self.B)
        elif name == "kappa":
            Kinf = kernel_values(q.family, q.kappa, self.D[:, self.inf_idx])
            Kinf[self.inf_idx, np.arange(len(self.inf_idx))] = 0.0
            s_new, b_new = self._kernel_caches(Kinf)
            old_ll = self._infection_ll(p.alpha, p.beta, self.s, self.B)
            new_ll = self._infection_ll(q.alpha, q.beta, s_new, b_new)
        elif name in ("mu_e", "var_e"):
            old_ll, new_ll = self._e_ll(p), self._e_ll(q)
        else:
            old_ll, new_ll = self._i_ll(p), self._i_ll(q)
        log_ratio = new_ll - old_ll + d_prior + jac
        if not (math.isfinite(new_ll) and math.log(self.rng.random()) < log_ratio):
            return False
        self.p = q
        self.loglik += new_ll - old_ll
        self.logprior += d_prior
        if name == "kappa":
            self.Kinf, self.s, self.B = Kinf, s_new, b_new
        return True

    # -- exposure updates --------------------------------------------------

    def _row_terms(self, x: int, t: float) -> tuple[float, np.ndarray]:
        """Kernel sum at exposure time ``t`` for host ``x`` and its overlap row."""
        live = (self.i_inf < t) & (t <= self.r[self.inf_idx])
        s = float(np.dot(self.Kinf[x], live))
        ov = np.maximum(np.minimum(self.rT_inf, min(t, self.T)) - self.i_inf, 0.0)
        return s, ov

    def _delta(self, x: int, t_new: float):
        """Log-likelihood change from moving host ``x``'s exposure to ``t_new`` (NEVER = remove)."""
        p = self.p
        t_old = self.e[x]
        kx = self.Kinf[x]
        _, ov_old = self._row_terms(x, t_old)
        s_new, ov_new = self._row_terms(x, t_new)
        d_rate = 0.0
        if t_old < NEVER:
            d_rate -= math.log(p.alpha + p.beta * self.s[x])
        if t_new < NEVER:
            rate = p.alpha + p.beta * s_new
            if rate <= 0:
                return -math.inf, s_new, 0.0, 0.0
            d_rate += math.log(rate)
        d_a = min(t_new, self.T) - min(t_old, self.T)
        d_b = float(np.dot(kx, ov_new - ov_old))
        a, b = p.e_shape, p.e_rate
        if np.isfinite(self.i[x]):
            lg = math.lgamma(a)
            d_e = _e_logpdf(self.i[x] - t_new, a, b, lg) - _e_logpdf(self.i[x] - t_old, a, b, lg)
        else:
            d_e = (_e_logsf(self.T - t_new, a, b) if t_new < NEVER else 0.0) - (
                _e_logsf(self.T - t_old, a, b) if t_old < NEVER else 0.0)
        delta = d_rate - p.alpha * d_a - p.beta * d_b + d_e
        return delta, s_new, d_a, d_b

    def _commit(self, x: int, t_new: float, delta: float, s_new: float, d_a: float, d_b: float) -> None:
        self.e[x] = t_new
        self.s[x] = s_new if t_new < NEVER else 0.0
        self.A += d_a
        self.B += d_b
        self.loglik += delta

    def update_exposure(self) -> None:
        kind = (MOVE, ADD, DELETE)[int(self.rng.integers(3))]
        self.proposed[kind] += 1
        self.accepted[kind] += getattr(self, "_" + kind)()

    def _move(self) -> bool:
        if not len(self.movable):
            return False
        x = int(self.movable[self.rng.integers(len(self.movable))])
        p = self.p
        ti = self.i[x]
        lo = max(0.0, ti - (p.mu_e + 3.0 * math.sqrt(p.var_e)))
        if self.e[x] < lo:
            # proposal window excludes the current value: reverse move impossible
            return False
        t_new = self.rng.uniform(lo, ti)
        delta, s_new, d_a, d_b = self._delta(x, t_new)
        if math.log(self.rng.random()) < delta:
            self._commit(x, t_new, delta, s_new, d_a, d_b)
            return True
        return False

    def _add(self) -> bool:
        cand = self.unobserved[~np.isfinite(self.e[self.unobserved])]
        if not len(cand) or self.T <= 0:
            return False
        x = int(cand[self.rng.integers(len(cand))])
        t_new = self.rng.uniform(0.0, self.T)
        delta, s_new, d_a, d_b = self._delta(x, t_new)
        n_occ_after = len(self.unobserved) - len(cand) + 1
        log_ratio = delta + math.log(len(cand) * self.T) - math.log(n_occ_after)
        if math.log(self.rng.random()) < log_ratio:
            self._commit(x, t_new, delta, s_new, d_a, d_b)
            return True
        return False

    def _delete(self) -> bool:
        occ = self.unobserved[np.isfinite(self.e[self.unobserved])]
        if not len(occ):
            return False
        x = int(occ[self.rng.integers(len(occ))])
        delta, s_new, d_a, d_b = self._delta(x, NEVER)
        n_cand_after = len(self.unobserved) - len(occ) + 1
        log_ratio = delta + math.log(len(occ)) - math.log(n_cand_after * self.T)
        if math.log(self.rng.random()) < log_ratio:
            self._commit(x, NEVER, delta, s_new, d_a, d_b)
            return True
        return False

    def state(self, iteration: int) -> ChainState:
        return ChainState(self.p, self.trajectory(), self.log_post, iteration)

    def acceptance(self) -> dict:
        return {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else float("nan")) for k in self.accepted}


# --------------------------------------------------------------------------- public API


def initial_exposures(y: ObservedData, mu_e: float) -> np.ndarray:
    """Exposure of every observed infection placed ``mu_e`` earlier (at most halfway to 0)."""
    e = np.full(y.n, NEVER)
    inf = np.isfinite(y.infection)
    e[inf] = y.infection[inf] - np.minimum(mu_e, 0.5 * y.infection[inf])
    e[list(y.seeds)] = 0.0
    return e


def default_init(y: ObservedData, family: KernelFamily | str) -> ModelParams:
    """Crude starting point: sojourn moments from observed I periods, generic rates otherwise."""
    family = KernelFamily(family)
    done = np.isfinite(y.infection) & np.isfinite(y.removal)
    d = y.removal[done] - y.infection[done]
    mu_i, var_i = (float(d.mean()), float(d.var(ddof=1))) if len(d) > 2 and d.var() > 0 else (1.0, 1.0)
    kappa = {KernelFamily.EXPONENTIAL: 0.03, KernelFamily.POWER_LAW: 2.0, KernelFamily.GAUSSIAN: 1e-3}[family]
    n_inf = max(1, y.n_infected)
    alpha = 0.5 * n_inf / (y.n * max(y.t_max, 1e-9))
    return ModelParams(alpha, 1.0, KernelSpec(family, kappa), 5.0, 2.5, mu_i, var_i)


@dataclass
class ChainResult:
    samples: list
    acceptance: dict
    scales: dict
    max_drift: float
    burnin: int
    thin: int

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, k):
        return self.samples[k]


def _default_thin(n_iter: int, burnin: int, max_samples: int = 10_000) -> int:
    return max(1, math.ceil((n_iter - burnin) / max_samples))


def run_chain(y, priors: PriorSpec | None, kernel: KernelSpec | KernelFamily | str, n_iter: int,
              thin: int | None = None, seed=None, *, burnin: int | None = None, init: ModelParams | None = None,
              moves_per_iter: int | None = None, augment: bool = True, exposures: np.ndarray | None = None,
              drift_every: int = 1000) -> ChainResult:
    """Sample ``(theta, exposures)`` from the posterior given observed data.

    Parameters
    ----------
    y : ObservedData or Trajectory
        With a Trajectory, its exposure times are the starting augmentation
        (and stay fixed when ``augment=False``).
    kernel : KernelSpec or family
        Kernel family of the fitted model; a KernelSpec also sets the initial kappa.
    n_iter : int
        Iterations; each updates every free parameter once and makes
        ``moves_per_iter`` exposure proposals (default: number of hosts).
    thin, burnin : int
        Default burn-in is 20% of ``n_iter``; default thinning keeps at most
        10 000 samples.  Proposal scales adapt only during burn-in.
    """
    priors = priors or PriorSpec()
    if isinstance(y, Trajectory):
        if exposures is None:
            exposures = y.exposure
        y = y.observed()
    y.validate()
    if isinstance(kernel, KernelSpec):
        family = kernel.family
        kappa0 = kernel.kappa
    else:
        family, kappa0 = KernelFamily(kernel), None
    p0 = init or default_init(y, family)
    if p0.family != family:
        p0 = p0.with_kernel(family, kappa0 or default_init(y, family).kappa)
    elif kappa0 is not None and init is None:
        p0 = p0.with_kernel(family, kappa0)
    # fixed parameters are pinned to their prior value
    vec = p0.as_vector()
    for k, n in enumerate(PARAM_NAMES):
        if isinstance(priors[n], Fixed):
            vec[k] = priors[n].value
    p0 = ModelParams.from_vector(family, vec)
    if exposures is None:
        exposures = initial_exposures(y, p0.mu_e)
    burnin = int(0.2 * n_iter) if burnin is None else int(burnin)
    thin = _default_thin(n_iter, burnin) if thin is None else int(thin)
    rng = np.random.default_rng(seed)
    smp = _Sampler(y, p0, priors, exposures, rng, augment)
    if not math.isfinite(smp.log_post):
        raise InvalidTrajectory("initial state has zero posterior density")
    moves = y.n if moves_per_iter is None else int(moves_per_iter)
    out = []
    for it in range(n_iter):
        step = (it + 1) ** -0.6 if it < burnin else None
        smp.update_params(step)
        if augment:
            for _ in range(moves):
                smp.update_exposure()
        if drift_every and (it + 1) % drift_every == 0:
            smp.check_drift()
        if it >= burnin and (it - burnin) % thin == 0:
            out.append(smp.state(it))
    return ChainResult(out, smp.acceptance(), dict(zip(PARAM_NAMES, smp.scales.tolist())),
                       smp.max_drift, burnin, thin)


def _sampler_for(state: ChainState, priors: PriorSpec, rng) -> _Sampler:
    return _Sampler(state.aug.observed(), state.params, priors, state.aug.exposure, rng)


def update_params(state: ChainState, rng, priors: PriorSpec | None = None, scales=None) -> ChainState:
    """One sweep of log-scale random-walk Metropolis updates over the free parameters."""
    smp = _sampler_for(state, priors or PriorSpec(), np.random.default_rng(rng))
    if scales is not None:
        smp.scales[:] = scales
    smp.update_params()
    return smp.state(state.iteration + 1)


def update_exposures(state: ChainState, rng, priors: PriorSpec | None = None, n_moves: int = 1) -> ChainState:
    """``n_moves`` MOVE / ADD / DELETE proposals, each type chosen with probability 1/3."""
    smp = _sampler_for(state, priors or PriorSpec(), np.random.default_rng(rng))
    for _ in range(n_moves):
        smp.update_exposure()
    return smp.state(state.iteration + 1)


def impute_sources(state: ChainState, rng=None) -> list[SourcedExposure]:
    """Draw the source of every exposure from its conditional distribution.

    PRIMARY has weight ``alpha``; an infectious host ``y`` has weight
    ``beta * K(d(y, x_j))``.
    """
    rng = np.random.default_rng(rng)
    p, traj = state.params, state.aug
    e, i, r = traj.exposure, traj.infection, traj.removal
    D = traj.population.distances
    out = []
    for j, x in enumerate(traj.exposure_order()):
        t = e[x]
        inf = np.flatnonzero((i < t) & (t <= r))
        w = np.concatenate(([p.alpha], p.beta * kernel_values(p.family, p.kappa, D[x, inf])))
        total = w.sum()
        if not total > 0:
            raise ImpossibleState(f"exposure of host {x} has no possible source")
        k = min(int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right")), len(w) - 1)
        out.append(SourcedExposure(j, int(x), PRIMARY if k == 0 else int(inf[k - 1])))
    return out
