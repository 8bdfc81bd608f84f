"""Core data model: hosts, kernels, parameters, trajectories and the exposure-rate arithmetic.

Event times are stored in float arrays.  An event that never happened (or
happened after the observation horizon) is stored as :data:`NEVER`, which is
``+inf`` so that ordinary comparisons such as ``exposure < t`` do the right
thing without special cases.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

NEVER = math.inf

#: populations larger than this compute distances row by row instead of caching N x N
DISTANCE_CACHE_CAP = 2000


class KernelcritError(Exception):
    """Base class for errors raised by this package."""


class InvalidTrajectory(KernelcritError, ValueError):
    pass


class WindowUnattainable(KernelcritError, ValueError):
    """The requested fraction of infected hosts is never reached."""


class KernelFamily(str, enum.Enum):
    EXPONENTIAL = "exp"
    POWER_LAW = "pow"
    GAUSSIAN = "gauss"

    @property
    def label(self) -> str:
        return {"exp": "exp(-k*d)", "pow": "(1+d^k)^-1", "gauss": "exp(-k*d^2)"}[self.value]


def kernel_values(family: KernelFamily, kappa: float, d: np.ndarray) -> np.ndarray:
    """Vectorised kernel evaluation without argument checks (hot path)."""
    if family is KernelFamily.EXPONENTIAL:
        return np.exp(-kappa * d)
    if family is KernelFamily.GAUSSIAN:
        return np.exp(-kappa * d * d)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + d**kappa)


def kernel_dkappa(family: KernelFamily, kappa: float, d: np.ndarray) -> np.ndarray:
    """Derivative of the kernel with respect to ``kappa``."""
    if family is KernelFamily.EXPONENTIAL:
        return -d * np.exp(-kappa * d)
    if family is KernelFamily.GAUSSIAN:
        return -d * d * np.exp(-kappa * d * d)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        dk = d**kappa
        out = -dk * np.log(d) / (1.0 + dk) ** 2
    return np.where(d > 0, np.nan_to_num(out, nan=0.0), 0.0)


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if not self.kappa > 0:
            raise ValueError(f"kernel kappa must be positive, got {self.kappa}")

    def __call__(self, d):
        return kernel_eval(self, d)


def kernel_eval(k: KernelSpec, d):
    """Kernel value at distance ``d`` (scalar or array); raises on negative distances."""
    arr = np.asarray(d, dtype=float)
    if np.any(arr < 0):
        raise ValueError("kernel distance must be non-negative")
    out = kernel_values(k.family, k.kappa, arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the spatial SEIR model.

    Sojourn times in E and I are Gamma distributed and given by their means and
    variances; :attr:`e_shape` etc. give the (shape, rate) parameterisation.
    """

    alpha: float
    beta: float
    kernel: KernelSpec
    mu_e: float
    var_e: float
    mu_i: float
    var_i: float

    NAMES = ("alpha", "beta", "kappa", "mu_e", "var_e", "mu_i", "var_i")

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        for name in ("mu_e", "var_e", "mu_i", "var_i"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    @property
    def kappa(self) -> float:
        return self.kernel.kappa

    @property
    def family(self) -> KernelFamily:
        return self.kernel.family

    @property
    def e_shape(self) -> float:
        return self.mu_e**2 / self.var_e

    @property
    def e_rate(self) -> float:
        return self.mu_e / self.var_e

    @property
    def i_shape(self) -> float:
        return self.mu_i**2 / self.var_i

    @property
    def i_rate(self) -> float:
        return self.mu_i / self.var_i

    def as_vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.kappa, self.mu_e, self.var_e, self.mu_i, self.var_i])

    @classmethod
    def from_vector(cls, family: KernelFamily | str, v: Sequence[float]) -> "ModelParams":
        a, b, k, me, ve, mi, vi = (float(x) for x in v)
        return cls(a, b, KernelSpec(KernelFamily(family), k), me, ve, mi, vi)

    def with_kernel(self, family: KernelFamily | str, kappa: float) -> "ModelParams":
        return replace(self, kernel=KernelSpec(KernelFamily(family), kappa))

    def to_dict(self) -> dict:
        d = dict(zip(self.NAMES, map(float, self.as_vector())))
        d["family"] = self.family.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls.from_vector(d["family"], [d[n] for n in cls.NAMES])


@dataclass(frozen=True, eq=False)
class HostPopulation:
    """Fixed host locations in the square ``[0, region_side]^2``; host ids are row indices."""

    coords: np.ndarray
    region_side: float = 2000.0

    def __post_init__(self):
        c = np.array(self.coords, dtype=float, copy=True).reshape(-1, 2)
        if np.any(c < 0) or np.any(c > self.region_side):
            raise ValueError("host coordinates must lie inside the square region")
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    @classmethod
    def uniform(cls, n: int, region_side: float = 2000.0, rng=None) -> "HostPopulation":
        rng = np.random.default_rng(rng)
        return cls(rng.uniform(0.0, region_side, size=(n, 2)), region_side)

    @property
    def n(self) -> int:
        return len(self.coords)

    def __len__(self) -> int:
        return self.n

    @cached_property
    def distances(self) -> np.ndarray:
        """Euclidean distance matrix (read-only)."""
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        d = np.sqrt((diff**2).sum(-1))
        d.flags.writeable = False
        return d

    def distance_rows(self, rows) -> np.ndarray:
        if self.n <= DISTANCE_CACHE_CAP:
            return self.distances[rows]
        diff = self.coords[np.atleast_1d(rows)][:, None, :] - self.coords[None, :, :]
        return np.sqrt((diff**2).sum(-1))

    def distance(self, a: int, b: int) -> float:
        return float(np.hypot(*(self.coords[a] - self.coords[b])))

    def kernel_matrix(self, kernel: KernelSpec) -> np.ndarray:
        """Pairwise kernel weights with a zero diagonal (hosts never challenge themselves)."""
        k = kernel_values(kernel.family, kernel.kappa, self.distances)
        np.fill_diagonal(k, 0.0)
        return k


def _as_index(hosts) -> np.ndarray:
    if isinstance(hosts, (set, frozenset)):
        hosts = sorted(hosts)
    return np.asarray(list(hosts) if not isinstance(hosts, np.ndarray) else hosts, dtype=np.intp)


def exposure_rate(p: ModelParams, pop: HostPopulation, target: int, infectious: Iterable[int]) -> float:
    """Rate at which susceptible ``target`` becomes exposed given the infectious set."""
    inf = _as_index(infectious)
    if target in set(inf.tolist()):
        raise ValueError("target host is infectious")
    if len(inf) == 0:
        return float(p.alpha)
    d = pop.distance_rows(target)[inf]
    return float(p.alpha + p.beta * math.fsum(kernel_values(p.family, p.kappa, d)))


def total_pressure(p: ModelParams, pop: HostPopulation, susceptibles: Iterable[int], infectious: Iterable[int]) -> float:
    """Sum of exposure rates over all susceptible hosts."""
    s = _as_index(susceptibles)
    inf = _as_index(infectious)
    if np.intersect1d(s, inf).size:
        raise ValueError("susceptible and infectious sets overlap")
    if len(s) == 0:
        return 0.0
    if len(inf) == 0:
        return float(len(s) * p.alpha)
    d = pop.distance_rows(s)[:, inf]
    return float(len(s) * p.alpha + p.beta * math.fsum(kernel_values(p.family, p.kappa, d).ravel()))


@dataclass(eq=False)
class Trajectory:
    """Complete event log of one epidemic on ``[0, t_max]``.

    ``seeds`` lists hosts that are already infectious at time zero (their
    exposure and infection times are both 0 and they contribute no exposure
    event to the likelihood).
    """

    population: HostPopulation
    exposure: np.ndarray
    infection: np.ndarray
    removal: np.ndarray
    t_max: float
    seeds: tuple[int, ...] = ()

    def __post_init__(self):
        self.exposure = np.asarray(self.exposure, dtype=float)
        self.infection = np.asarray(self.infection, dtype=float)
        self.removal = np.asarray(self.removal, dtype=float)
        self.seeds = tuple(sorted(int(s) for s in self.seeds))
        self.t_max = float(self.t_max)

    @property
    def n(self) -> int:
        return self.population.n

    @property
    def seed_mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[list(self.seeds)] = True
        return m

    def copy(self) -> "Trajectory":
        return Trajectory(self.population, self.exposure.copy(), self.infection.copy(),
                          self.removal.copy(), self.t_max, self.seeds)

    def validate(self, alpha: float | None = None) -> None:
        """Raise :class:`InvalidTrajectory` if ordering or horizon invariants fail.

        With ``alpha`` given, also checks that no exposure happens while nobody
        is infectious when ``alpha == 0``.
        """
        e, i, r, T = self.exposure, self.infection, self.removal, self.t_max
        n = self.n
        if not (len(e) == len(i) == len(r) == n):
            raise InvalidTrajectory("event arrays must have one entry per host")
        for name, a in (("exposure", e), ("infection", i), ("removal", r)):
            fin = np.isfinite(a)
            if np.any(np.isnan(a)) or np.any(a[fin] < 0) or np.any(a[fin] > T):
                raise InvalidTrajectory(f"{name} times must lie in [0, t_max] or be NEVER")
        if np.any(np.isfinite(i) & ~np.isfinite(e)) or np.any(np.isfinite(r) & ~np.isfinite(i)):
            raise InvalidTrajectory("a later event is defined while an earlier one is not")
        fe, fi = np.isfinite(i), np.isfinite(r)
        if np.any(e[fe] > i[fe]) or np.any(i[fi] > r[fi]):
            raise InvalidTrajectory("events out of order")
        sm = self.seed_mask
        if np.any(sm & ((e != 0) | (i != 0))):
            raise InvalidTrajectory("seed hosts must be exposed and infectious at time 0")
        if alpha is not None and alpha <= 0:
            for x in np.flatnonzero(np.isfinite(e) & ~sm):
                if not np.any((i < e[x]) & (e[x] <= r)):
                    raise InvalidTrajectory(f"host {x} exposed with no infectious host and alpha=0")

    def exposure_order(self) -> np.ndarray:
        """Non-seed exposed hosts in time order, ties broken by host id."""
        idx = np.flatnonzero(np.isfinite(self.exposure) & ~self.seed_mask)
        return idx[np.lexsort((idx, self.exposure[idx]))]

    def censor(self, t_cut: float) -> "Trajectory":
        """Trajectory restricted to ``[0, t_cut]``; later events become NEVER."""
        if t_cut > self.t_max:
            raise ValueError("cannot extend a trajectory beyond its horizon")
        f = lambda a: np.where(a <= t_cut, a, NEVER)
        return Trajectory(self.population, f(self.exposure), f(self.infection), f(self.removal), t_cut, self.seeds)

    def scaled(self, factor: float) -> "Trajectory":
        """All event times multiplied by ``factor`` (> 0)."""
        return Trajectory(self.population, self.exposure * factor, self.infection * factor,
                          self.removal * factor, self.t_max * factor, self.seeds)

    def permuted(self, perm: np.ndarray) -> "Trajectory":
        """Relabel hosts so that new host ``k`` is old host ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        pop = HostPopulation(self.population.coords[perm], self.population.region_side)
        return Trajectory(pop, self.exposure[perm], self.infection[perm], self.removal[perm],
                          self.t_max, tuple(int(inv[s]) for s in self.seeds))

    def observed(self) -> "ObservedData":
        return ObservedData(self.population, self.infection.copy(), self.removal.copy(), self.t_max, self.seeds)

    @property
    def n_infected(self) -> int:
        return int(np.isfinite(self.infection).sum())


@dataclass(eq=False)
class ObservedData:
    """Observed E->I and I->R times up to ``t_max``; exposures are hidden."""

    population: HostPopulation
    infection: np.ndarray
    removal: np.ndarray
    t_max: float
    seeds: tuple[int, ...] = ()

    def __post_init__(self):
        self.infection = np.asarray(self.infection, dtype=float)
        self.removal = np.asarray(self.removal, dtype=float)
        self.seeds = tuple(sorted(int(s) for s in self.seeds))
        self.t_max = float(self.t_max)

    @property
    def n(self) -> int:
        return self.population.n

    def validate(self) -> None:
        i, r, T = self.infection, self.removal, self.t_max
        if len(i) != self.n or len(r) != self.n:
            raise InvalidTrajectory("event arrays must have one entry per host")
        if np.any(np.isnan(i)) or np.any(np.isnan(r)):
            raise InvalidTrajectory("NaN event time")
        fi, fr = np.isfinite(i), np.isfinite(r)
        if np.any(i[fi] < 0) or np.any(i[fi] > T) or np.any(r[fr] > T):
            raise InvalidTrajectory("observed times must lie in [0, t_max]")
        if np.any(fr & ~fi):
            raise InvalidTrajectory("removal observed for a host that never became infectious")
        if np.any(r[fr] < i[fr]):
            raise InvalidTrajectory("removal before infection")
        if not fi.any():
            raise InvalidTrajectory("no observed infections")

    @property
    def n_infected(self) -> int:
        return int(np.isfinite(self.infection).sum())


def window_count(fraction: float, n: int) -> int:
    """Number of hosts that must have become infectious for a window ``fraction``."""
    if not 0 < fraction <= 1:
        raise ValueError("window fraction must lie in (0, 1]")
    # round first: 0.7 * 150 is 105.00000000000001 in floating point
    return max(1, math.ceil(round(fraction * n, 9)))


def truncate(traj: Trajectory, fraction: float) -> tuple[ObservedData, float]:
    """Observed data up to the time the given fraction of hosts has entered I."""
    k = window_count(fraction, traj.n)
    times = np.sort(traj.infection[np.isfinite(traj.infection)])
    if len(times) < k:
        raise WindowUnattainable(f"only {len(times)} of the required {k} hosts became infectious")
    t_cut = float(times[k - 1])
    return traj.censor(t_cut).observed(), t_cut
