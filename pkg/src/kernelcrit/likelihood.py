"""Full-trajectory and partial likelihoods.

The full log-likelihood of a trajectory ``x`` on ``[0, T]`` is::

    sum_j log rate_j  -  int_0^T sum_{s in S(t)} rate_s(t) dt
        + E-sojourn terms + I-sojourn terms

The pressure integral is evaluated exactly: host ``s`` is susceptible on
``[0, min(e_s, T))`` and host ``y`` infectious on ``[i_y, min(r_y, T))``, so the
integral is ``alpha * sum_s min(e_s, T) + beta * sum_{s,y} K_sy * overlap_sy``.
Censored sojourns contribute Gamma survival terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import HostPopulation, KernelFamily, KernelSpec, ModelParams, Trajectory, kernel_dkappa, kernel_values
from .sojourn import gamma_logpdf, gamma_logsf


def fsum(a) -> float:
    """Correctly rounded sum of an array."""
    return math.fsum(np.asarray(a, dtype=float).ravel().tolist())


@dataclass(frozen=True)
class LogLikTerms:
    exposure: float
    pressure: float
    e_sojourn: float
    i_sojourn: float
    zero_rate_events: int

    @property
    def infection(self) -> float:
        return self.exposure - self.pressure

    @property
    def total(self) -> float:
        return self.exposure - self.pressure + self.e_sojourn + self.i_sojourn

    @property
    def feasible(self) -> bool:
        return self.zero_rate_events == 0 and math.isfinite(self.total)


def _overlap(e, i, r, T):
    """``overlap[s, y]``: time ``s`` spends susceptible while ``y`` is infectious."""
    end = np.minimum(np.minimum(e[:, None], r[None, :]), T)
    with np.errstate(invalid="ignore"):
        ov = end - i[None, :]
    return np.where(np.isfinite(i)[None, :], np.maximum(ov, 0.0), 0.0)


def _exposure_sums(K, e, i, r, exposed):
    """Kernel sum over hosts infectious just before each exposure in ``exposed``."""
    t = e[exposed][:, None]
    live = (i[None, :] < t) & (t <= r[None, :])
    return (K[exposed] * live).sum(axis=1)


def sojourn_loglik(p: ModelParams, traj: Trajectory) -> tuple[float, float]:
    """Log-likelihood contributions of the E and I sojourns (with censoring at ``t_max``)."""
    e, i, r, T = traj.exposure, traj.infection, traj.removal, traj.t_max
    exposed = np.isfinite(e) & ~traj.seed_mask
    done_e = exposed & np.isfinite(i)
    open_e = exposed & ~np.isfinite(i)
    le = fsum(gamma_logpdf(i[done_e] - e[done_e], p.mu_e, p.var_e)) + fsum(
        gamma_logsf(T - e[open_e], p.mu_e, p.var_e))
    inf = np.isfinite(i)
    done_i = inf & np.isfinite(r)
    open_i = inf & ~np.isfinite(r)
    li = fsum(gamma_logpdf(r[done_i] - i[done_i], p.mu_i, p.var_i)) + fsum(
        gamma_logsf(T - i[open_i], p.mu_i, p.var_i))
    return le, li


def loglik_terms(p: ModelParams, traj: Trajectory, K: np.ndarray | None = None) -> LogLikTerms:
    e, i, r, T = traj.exposure, traj.infection, traj.removal, traj.t_max
    if K is None:
        K = traj.population.kernel_matrix(p.kernel)
    exposed = np.flatnonzero(np.isfinite(e) & ~traj.seed_mask)
    rates = p.alpha + p.beta * _exposure_sums(K, e, i, r, exposed)
    zero = int(np.sum(rates <= 0))
    with np.errstate(divide="ignore"):
        expo = fsum(np.log(rates)) if zero == 0 else -math.inf
    a_term = fsum(np.minimum(e[~traj.seed_mask], T))
    b_term = fsum(K * _overlap(e, i, r, T))
    pressure = p.alpha * a_term + p.beta * b_term
    le, li = sojourn_loglik(p, traj)
    return LogLikTerms(expo, pressure, le, li, zero)


def full_loglik(p: ModelParams, traj: Trajectory) -> float:
    """Exact log-likelihood of a complete trajectory; ``-inf`` if an exposure has zero rate."""
    terms = loglik_terms(p, traj)
    return terms.total if terms.zero_rate_events == 0 else -math.inf


def infection_loglik_grad(p: ModelParams, traj: Trajectory) -> np.ndarray:
    """Gradient of :func:`full_loglik` with respect to ``(alpha, beta, kappa)``."""
    e, i, r, T = traj.exposure, traj.infection, traj.removal, traj.t_max
    D = traj.population.distances
    K = traj.population.kernel_matrix(p.kernel)
    dK = kernel_dkappa(p.family, p.kappa, D)
    np.fill_diagonal(dK, 0.0)
    exposed = np.flatnonzero(np.isfinite(e) & ~traj.seed_mask)
    s = _exposure_sums(K, e, i, r, exposed)
    ds = _exposure_sums(dK, e, i, r, exposed)
    rates = p.alpha + p.beta * s
    ov = _overlap(e, i, r, T)
    a_term = fsum(np.minimum(e[~traj.seed_mask], T))
    return np.array([
        fsum(1.0 / rates) - a_term,
        fsum(s / rates) - fsum(K * ov),
        p.beta * (fsum(ds / rates) - fsum(dK * ov)),
    ])


class InfectionStats:
    """Kernel-dependent sufficient statistics of a fixed trajectory.

    ``loglik(family, alpha, beta, kappa)`` re-evaluates the infection part of
    the full log-likelihood using only the host pairs that matter, which makes
    repeated evaluation during optimisation cheap.
    """

    def __init__(self, traj: Trajectory):
        e, i, r, T = traj.exposure, traj.infection, traj.removal, traj.t_max
        D = traj.population.distances
        exposed = np.flatnonzero(np.isfinite(e) & ~traj.seed_mask)
        t = e[exposed][:, None]
        live = (i[None, :] < t) & (t <= r[None, :])
        ev, y = np.nonzero(live)
        self.n_events = len(exposed)
        self.pair_event = ev
        self.pair_d = D[exposed[ev], y]
        ov = _overlap(e, i, r, T)
        np.fill_diagonal(ov, 0.0)
        sx, sy = np.nonzero(ov)
        self.overlap_d = D[sx, sy]
        self.overlap_w = ov[sx, sy]
        self.susceptible_time = fsum(np.minimum(e[~traj.seed_mask], T))

    def kernel_sums(self, family: KernelFamily, kappa: float) -> tuple[np.ndarray, float]:
        s = np.bincount(self.pair_event, kernel_values(family, kappa, self.pair_d), minlength=self.n_events)
        b = float(np.dot(kernel_values(family, kappa, self.overlap_d), self.overlap_w))
        return s, b

    def loglik(self, family: KernelFamily, alpha: float, beta: float, kappa: float) -> float:
        s, b = self.kernel_sums(family, kappa)
        rates = alpha + beta * s
        if np.any(rates <= 0):
            return -math.inf
        return fsum(np.log(rates)) - alpha * self.susceptible_time - beta * b


@dataclass(frozen=True)
class ExposureEvent:
    """Sets of susceptible and infectious hosts just before an exposure, and the exposed host."""

    susceptible: frozenset
    infectious: frozenset
    exposed: int

    def __post_init__(self):
        if self.exposed not in self.susceptible:
            raise ValueError("exposed host must belong to the susceptible set")


@dataclass(eq=False)
class PartialData:
    """Per-exposure susceptible/infectious sets; carries no event times."""

    population: HostPopulation
    events: tuple

    def __len__(self) -> int:
        return len(self.events)


def extract_partial_data(traj: Trajectory) -> PartialData:
    """Susceptible and infectious sets immediately before every exposure, in time order.

    Exposures at identical times are ordered by host id, so an earlier-ordered
    host is no longer susceptible at the later one.
    """
    e, i, r = traj.exposure, traj.infection, traj.removal
    order = traj.exposure_order()
    ids = np.arange(traj.n)
    candidates = ~traj.seed_mask
    events = []
    for x in order:
        t = e[x]
        s_mask = candidates & ((e > t) | ((e == t) & (ids >= x)))
        i_mask = (i < t) & (t <= r)
        events.append(ExposureEvent(frozenset(np.flatnonzero(s_mask).tolist()),
                                    frozenset(np.flatnonzero(i_mask).tolist()), int(x)))
    return PartialData(traj.population, tuple(events))


class PartialStats:
    """Array form of :class:`PartialData` for fast evaluation of ``log G``."""

    def __init__(self, z: PartialData):
        D = z.population.distances
        num_ev, num_d, den_ev, den_d, n_s = [], [], [], [], []
        for j, ev in enumerate(z.events):
            s = np.fromiter(sorted(ev.susceptible), dtype=np.intp)
            inf = np.fromiter(sorted(ev.infectious), dtype=np.intp)
            n_s.append(len(s))
            if len(inf):
                num_d.append(D[ev.exposed, inf])
                num_ev.append(np.full(len(inf), j))
                dd = D[np.ix_(s, inf)].ravel()
                den_d.append(dd)
                den_ev.append(np.full(len(dd), j))
        cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.empty(0, dtype=dt)
        self.n_events = len(z.events)
        self.num_event, self.num_d = cat(num_ev, np.intp), cat(num_d, float)
        self.den_event, self.den_d = cat(den_ev, np.intp), cat(den_d, float)
        self.n_susceptible = np.asarray(n_s, dtype=float)

    def log_factors(self, family: KernelFamily, alpha: float, beta: float, kappa: float) -> np.ndarray:
        num = np.bincount(self.num_event, kernel_values(family, kappa, self.num_d), minlength=self.n_events)
        den = np.bincount(self.den_event, kernel_values(family, kappa, self.den_d), minlength=self.n_events)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(alpha + beta * num) - np.log(self.n_susceptible * alpha + beta * den)

    def loglik(self, family: KernelFamily, alpha: float, beta: float, kappa: float) -> float:
        lf = self.log_factors(family, alpha, beta, kappa)
        if np.any(~np.isfinite(lf)):
            return -math.inf
        return fsum(lf)


def partial_loglik(kernel: KernelSpec, alpha: float, beta: float, z: PartialData) -> float:
    """``log G``: sum over exposures of log(rate of the exposed host / total pressure).

    Returns ``-inf`` when some exposure has zero rate (no infectious host and
    ``alpha == 0``).
    """
    return PartialStats(z).loglik(kernel.family, alpha, beta, kernel.kappa)
