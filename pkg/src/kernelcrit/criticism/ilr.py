"""Infection-link residuals and their Anderson-Darling test."""
from __future__ import annotations

import numpy as np

from ..inference import ChainState, SourcedExposure, impute_sources
from ..simulator import _interval_in, ordered_links
from .adtest import anderson_darling
from .base import TestReport, pool_map, sample_rngs


def link_intervals(state: ChainState, sources: list[SourcedExposure]) -> np.ndarray:
    """``(lo, hi)`` of the realised link of every exposure, one row per event."""
    p, traj = state.params, state.aug
    e, i, r = traj.exposure, traj.infection, traj.removal
    K = traj.population.kernel_matrix(p.kernel)
    ids = np.arange(traj.n)
    candidates = ~traj.seed_mask
    out = np.empty((len(sources), 2))
    for k, src in enumerate(sources):
        x, t = src.host, e[src.host]
        # same tie rule as the partial data: equal-time exposures are taken in id order
        S = np.flatnonzero(candidates & ((e > t) | ((e == t) & (ids >= x))))
        I = np.flatnonzero((i < t) & (t <= r))
        out[k] = _interval_in(*ordered_links(p, K, S, I), x, src.source)
    return out


def ilr_residuals(state: ChainState, sources: list[SourcedExposure], rng=None) -> np.ndarray:
    """One ``r2`` residual per exposure, uniform within the interval of its realised link."""
    rng = np.random.default_rng(rng)
    iv = link_intervals(state, sources)
    if len(sources) and len({s.host for s in sources}) != len(sources):
        raise ValueError("one source per exposure event is required")
    u = rng.random(len(iv))
    return iv[:, 0] + u * (iv[:, 1] - iv[:, 0])


def ilr_pvalue(state: ChainState, rng=None) -> float:
    rng = np.random.default_rng(rng)
    sources = impute_sources(state, rng)
    return anderson_darling(ilr_residuals(state, sources, rng))[1]


def ilr_test(samples, rng=None, threads: int = 1, **meta) -> TestReport:
    """Mean over retained samples of the AD p-value of the imputed residuals.

    ``meta`` fills the descriptive fields of the report (dataset, M0, M1,
    window, seed).
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no retained samples")
    rngs = sample_rngs(rng, len(samples))
    p = pool_map(lambda k: ilr_pvalue(samples[k], rngs[k]), range(len(samples)), threads)
    meta.setdefault("M0", samples[0].params.family.value)
    return TestReport("ILR", float(np.mean(p)), len(p), p_values=[float(v) for v in p], **meta)
