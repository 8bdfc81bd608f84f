"""Latent likelihood-ratio tests with Monte-Carlo p-values.

For a retained sample ``(theta, x)`` the statistic is
``log T = log pi_0(x | theta) - max log pi_1(x | .)``.  A fresh ``x'`` is drawn
from the null model at ``theta`` over the same population and horizon, the
alternative is refitted to it, and the sample's p-value estimate is the
indicator of ``T' < T`` (ties count one half).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..likelihood import PartialStats, extract_partial_data, full_loglik
from ..model import KernelFamily, ModelParams, Trajectory
from ..simulator import simulate
from .base import TestReport, pool_map, sample_rngs
from .mle import maximize_loglik

MODES = {"full": "LLR-full", "partial": "LLR-partial"}


class MLEFailure(RuntimeError):
    pass


def log_T(p0: ModelParams, x: Trajectory, M1: KernelFamily, mode: str, rng) -> float:
    """Log ratio of the null likelihood at ``p0`` to the maximised alternative."""
    if mode == "full":
        ll0 = full_loglik(p0, x)
        fit = maximize_loglik("full", x, M1, init=p0, rng=rng)
    elif mode == "partial":
        stats = PartialStats(extract_partial_data(x))
        ll0 = stats.loglik(p0.family, p0.alpha, p0.beta, p0.kappa)
        fit = maximize_loglik("partial", stats, M1, init=p0, rng=rng)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not math.isfinite(fit.loglik_at_max):
        raise MLEFailure("no finite objective value in any restart")
    return ll0 - fit.loglik_at_max


def exceedance(log_t: float, log_t_prime) -> float:
    """Frequency of ``T' < T`` with ties counted one half."""
    tp = np.asarray(log_t_prime, dtype=float)
    return float(np.mean((tp < log_t) + 0.5 * (tp == log_t)))


@dataclass
class _SampleResult:
    log_t: float
    log_t_prime: list
    p: float | None


def _one_sample(state, M1, mode, draws, rng) -> _SampleResult:
    p0, x = state.params, state.aug
    try:
        lt = log_T(p0, x, M1, mode, rng)
        ltp = []
        for _ in range(draws):
            xp = simulate(p0, x.population, rng, stop=x.t_max, seeds=x.seeds)
            ltp.append(log_T(p0, xp, M1, mode, rng))
    except MLEFailure:
        return _SampleResult(math.nan, [], None)
    return _SampleResult(lt, ltp, exceedance(lt, ltp))


def llrt_pvalue_mean(samples, M0, M1, mode: str = "full", rng=None, draws_per_sample: int = 1,
                     threads: int = 1, **meta) -> TestReport:
    """Posterior-expected p-value of the latent likelihood-ratio test.

    Parameters
    ----------
    samples : sequence of ChainState
        Retained posterior samples of the null model ``M0``.
    M0, M1 : kernel family
        Null (fitted) and alternative kernel families.
    mode : "full" or "partial"
        Full-trajectory likelihood or the partial likelihood of the imputed
        exposure sets.
    draws_per_sample : int
        Simulated ``x'`` per sample; the per-sample estimate is the pooled
        frequency.

    Samples whose alternative fit fails are dropped and counted in
    ``n_dropped``.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no retained samples")
    if draws_per_sample < 1:
        raise ValueError("draws_per_sample must be at least 1")
    M0, M1 = KernelFamily(M0), KernelFamily(M1)
    for s in samples:
        if s.params.family != M0:
            raise ValueError(f"sample kernel {s.params.family.value} does not match M0={M0.value}")
    rngs = sample_rngs(rng, len(samples))
    res = pool_map(lambda k: _one_sample(samples[k], M1, mode, draws_per_sample, rngs[k]),
                   range(len(samples)), threads)
    ok = [r for r in res if r.p is not None]
    if not ok:
        raise MLEFailure(f"alternative fit failed on all {len(res)} samples")
    p = [r.p for r in ok]
    return TestReport(MODES[mode], float(np.mean(p)), len(ok), M0=M0.value, M1=M1.value,
                      n_dropped=len(res) - len(ok), p_values=p,
                      log_T=[r.log_t for r in ok], log_T_prime=[r.log_t_prime for r in ok], **meta)
