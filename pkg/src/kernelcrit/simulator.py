"""Exact event-driven simulation of the spatial SEIR model.

Two routes produce trajectories with the same law:

* :func:`simulate` draws competing exponential waiting times from a numpy
  ``Generator``;
* :func:`functional_map` is a deterministic map of four U(0,1) streams, which
  gives every exposure an infection-link residual (the ``r2`` entry that picked
  the responsible link).

Rates are piecewise constant between events, so both routes are exact.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .model import NEVER, HostPopulation, KernelcritError, ModelParams, Trajectory
from .sojourn import gamma_quantile

#: source label of a background (primary) infection
PRIMARY = -1

_INFECTION, _REMOVAL = 0, 1


class EpidemicExtinct(KernelcritError):
    """The epidemic died out before every host became infectious."""

    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


class StreamExhausted(KernelcritError, IndexError):
    pass


@dataclass(frozen=True)
class LatentStreams:
    """Four i.i.d. U(0,1) sequences driving :func:`functional_map`.

    ``r1`` exposure waiting times, ``r2`` link selection, ``r3``/``r4``
    quantiles of the E and I sojourns.
    """

    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    r4: np.ndarray

    @classmethod
    def draw(cls, n: int, rng=None) -> "LatentStreams":
        rng = np.random.default_rng(rng)
        u = rng.random((4, n))
        # open interval: rng.random() can return exactly 0
        u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
        return cls(*u)


class _Epidemic:
    """Compartment bookkeeping shared by both simulation routes."""

    def __init__(self, p: ModelParams, pop: HostPopulation, seeds=()):
        self.p = p
        self.pop = pop
        self.K = pop.kernel_matrix(p.kernel)
        n = pop.n
        self.e = np.full(n, NEVER)
        self.i = np.full(n, NEVER)
        self.r = np.full(n, NEVER)
        self.susceptible = np.ones(n, dtype=bool)
        self.pressure = np.zeros(n)
        self.n_infectious = 0
        self.n_entered_i = 0
        self.heap: list = []
        self.t = 0.0
        self.seeds = tuple(sorted(int(s) for s in seeds))

    def total(self) -> float:
        s = self.susceptible
        n_s = int(s.sum())
        if n_s == 0:
            return 0.0
        if self.n_infectious == 0 or self.p.beta == 0:
            return n_s * self.p.alpha
        return n_s * self.p.alpha + self.p.beta * float(self.pressure[s].sum())

    def expose(self, x: int, t: float, e_soj: float, i_soj: float) -> None:
        self.t = t
        self.e[x] = t
        self.susceptible[x] = False
        heapq.heappush(self.heap, (t + e_soj, x, _INFECTION, i_soj))

    def seed(self, x: int, i_soj: float) -> None:
        self.e[x] = 0.0
        self.susceptible[x] = False
        heapq.heappush(self.heap, (0.0, x, _INFECTION, i_soj))

    def next_time(self) -> float:
        return self.heap[0][0] if self.heap else NEVER

    def transition(self) -> None:
        t, x, kind, i_soj = heapq.heappop(self.heap)
        self.t = t
        if kind == _INFECTION:
            self.i[x] = t
            self.n_infectious += 1
            self.n_entered_i += 1
            self.pressure += self.K[x]
            heapq.heappush(self.heap, (t + i_soj, x, _REMOVAL, 0.0))
        else:
            self.r[x] = t
            self.n_infectious -= 1
            if self.n_infectious == 0:
                self.pressure[:] = 0.0
            else:
                self.pressure -= self.K[x]

    def trajectory(self, t_max: float) -> Trajectory:
        cut = lambda a: np.where(a <= t_max, a, NEVER)
        return Trajectory(self.pop, cut(self.e), cut(self.i), cut(self.r), t_max, self.seeds)


def _resolve_stop(stop) -> float | None:
    if stop in ("full", None):
        return None
    t_max = float(stop)
    if not t_max >= 0:
        raise ValueError("stop horizon must be non-negative")
    return t_max


def _run(ep: _Epidemic, horizon: float | None, next_exposure) -> Trajectory:
    """Advance ``ep`` until the stop rule fires.

    ``next_exposure(total, t_next)`` returns the time of the next exposure if it
    happens before ``t_next`` (and performs it), else ``None``.
    """
    n = ep.pop.n
    limit = NEVER if horizon is None else horizon
    while True:
        if horizon is None and ep.n_entered_i == n:
            return ep.trajectory(ep.t)
        tot = ep.total()
        t_next = ep.next_time()
        if next_exposure(tot, min(t_next, limit)):
            continue
        if t_next == NEVER:
            if horizon is None:
                traj = ep.trajectory(ep.t)
                raise EpidemicExtinct(
                    f"epidemic went extinct after {ep.n_entered_i} of {n} hosts became infectious", traj)
            return ep.trajectory(horizon)
        if t_next > limit:
            return ep.trajectory(horizon)
        ep.transition()


def simulate(p: ModelParams, pop: HostPopulation, rng=None, stop="full", seeds=()) -> Trajectory:
    """Simulate one epidemic from an entirely susceptible population.

    Parameters
    ----------
    stop : "full" or float
        ``"full"`` runs until every host has become infectious (the horizon is
        then the last infection time); a number is a fixed horizon ``t_max``.
    seeds : sequence of int
        Hosts infectious at time 0, needed when ``alpha == 0``.
    """
    rng = np.random.default_rng(rng)
    horizon = _resolve_stop(stop)
    if p.alpha <= 0 and not seeds:
        raise ValueError("alpha == 0 requires at least one seeded infectious host")
    ep = _Epidemic(p, pop, seeds)
    a_e, b_e, a_i, b_i = p.e_shape, p.e_rate, p.i_shape, p.i_rate
    for s in ep.seeds:
        ep.seed(s, rng.gamma(a_i, 1.0 / b_i))
    alpha, beta = p.alpha, p.beta

    def next_exposure(tot, t_limit):
        if tot <= 0:
            return False
        t_exp = ep.t + rng.standard_exponential() / tot
        if t_exp >= t_limit:
            return False
        s_idx = np.flatnonzero(ep.susceptible)
        c = np.cumsum(alpha + beta * ep.pressure[s_idx])
        k = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(s_idx) - 1)
        ep.expose(int(s_idx[k]), t_exp, rng.gamma(a_e, 1.0 / b_e), rng.gamma(a_i, 1.0 / b_i))
        return True

    return _run(ep, horizon, next_exposure)


def ordered_links(p: ModelParams, K: np.ndarray, susceptible: np.ndarray, infectious: np.ndarray):
    """All positive-weight S-I links in ascending order of weight.

    Every susceptible host has a background link from :data:`PRIMARY` with
    weight ``alpha``; each (infectious, susceptible) pair has weight
    ``beta * K``.  Equal weights are ordered by target then source id.

    Returns ``(weights, targets, sources)``, all sorted.
    """
    s = np.asarray(susceptible, dtype=np.intp)
    i = np.asarray(infectious, dtype=np.intp)
    parts_w, parts_t, parts_s = [], [], []
    if p.alpha > 0:
        parts_w.append(np.full(len(s), p.alpha))
        parts_t.append(s)
        parts_s.append(np.full(len(s), PRIMARY, dtype=np.intp))
    if p.beta > 0 and len(i):
        w = p.beta * K[np.ix_(s, i)]
        parts_w.append(w.ravel())
        parts_t.append(np.repeat(s, len(i)))
        parts_s.append(np.tile(i, len(s)))
    if not parts_w:
        return np.empty(0), np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    w = np.concatenate(parts_w)
    t = np.concatenate(parts_t)
    src = np.concatenate(parts_s)
    keep = w > 0
    w, t, src = w[keep], t[keep], src[keep]
    order = np.lexsort((src, t, w))
    return w[order], t[order], src[order]


def _interval_in(weights, targets, sources, exposed: int, source: int) -> tuple[float, float]:
    hit = np.flatnonzero((targets == exposed) & (sources == source))
    if len(hit) == 0:
        raise ValueError(f"no positive-weight link {source} -> {exposed}")
    k = int(hit[0])
    cum = np.cumsum(weights)
    total = cum[-1]
    lo = (cum[k - 1] if k else 0.0) / total
    hi = cum[k] / total
    return float(lo), float(min(hi, 1.0))


def link_interval(p: ModelParams, pop: HostPopulation, susceptible, infectious, exposed: int, source: int):
    """Sub-interval of [0,1] that selects the link ``source -> exposed``.

    The intervals of all links partition [0,1] and each has width
    ``weight / total weight``.
    """
    s = np.asarray(sorted(susceptible), dtype=np.intp)
    i = np.asarray(sorted(infectious), dtype=np.intp)
    if exposed not in set(s.tolist()):
        raise ValueError("exposed host is not susceptible")
    if source != PRIMARY and source not in set(i.tolist()):
        raise ValueError("source host is not infectious")
    w, t, src = ordered_links(p, pop.kernel_matrix(p.kernel), s, i)
    return _interval_in(w, t, src, exposed, source)


def functional_map(p: ModelParams, pop: HostPopulation, r: LatentStreams, stop="full", seeds=()) -> Trajectory:
    """Deterministic trajectory from parameters and latent uniform streams.

    The j-th exposure happens when the integrated total pressure since the
    previous exposure reaches ``-log(1 - r1[j])``; the exposed host is the
    target of the link picked by ``r2[j]`` from the ascending cumulative link
    weights; its E and I sojourns are the Gamma quantiles at ``r3[j]`` and
    ``r4[n_seeds + j]`` (seeds use the first entries of ``r4``).
    """
    horizon = _resolve_stop(stop)
    if p.alpha <= 0 and not seeds:
        raise ValueError("alpha == 0 requires at least one seeded infectious host")
    ep = _Epidemic(p, pop, seeds)
    n_seeds = len(ep.seeds)
    q_e = gamma_quantile(np.asarray(r.r3), p.mu_e, p.var_e)
    q_i = gamma_quantile(np.asarray(r.r4), p.mu_i, p.var_i)
    if len(q_i) < n_seeds:
        raise StreamExhausted("r4 stream shorter than the number of seeds")
    for k, s in enumerate(ep.seeds):
        ep.seed(s, q_i[k])
    state = {"j": 0, "hazard": None}

    def entry(stream, name, k):
        if k >= len(stream):
            raise StreamExhausted(f"stream {name} exhausted at entry {k}")
        return stream[k]

    def next_exposure(tot, t_limit):
        if tot <= 0:
            return False
        j = state["j"]
        if state["hazard"] is None:
            state["hazard"] = -math.log1p(-entry(r.r1, "r1", j))
        t_exp = ep.t + state["hazard"] / tot
        if t_exp >= t_limit:
            if t_limit < NEVER:
                state["hazard"] = max(0.0, state["hazard"] - tot * (t_limit - ep.t))
            return False
        s_idx = np.flatnonzero(ep.susceptible)
        i_idx = np.flatnonzero(np.isfinite(ep.i) & ~np.isfinite(ep.r))
        w, targets, _ = ordered_links(p, ep.K, s_idx, i_idx)
        cum = np.cumsum(w)
        k = min(int(np.searchsorted(cum, entry(r.r2, "r2", j) * cum[-1], side="right")), len(w) - 1)
        ep.expose(int(targets[k]), t_exp, entry(q_e, "r3", j), entry(q_i, "r4", n_seeds + j))
        state["j"] = j + 1
        state["hazard"] = None
        return True

    return _run(ep, horizon, next_exposure)
