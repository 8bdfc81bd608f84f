import math

import numpy as np
import pytest

import kernelcrit.criticism.ilr as ilr_mod
from kernelcrit.criticism import anderson_darling, ilr_residuals, ilr_test, link_intervals
from kernelcrit.inference import ChainState, SourcedExposure, impute_sources
from kernelcrit.model import NEVER, HostPopulation, KernelSpec, ModelParams, Trajectory
from kernelcrit.simulator import PRIMARY, simulate

from conftest import small_params


def _state(p, x):
    return ChainState(p, x, 0.0)


def test_single_susceptible_interval_is_unit():
    pop = HostPopulation(np.array([[0.0, 0.0]]), 1.0)
    x = Trajectory(pop, np.array([1.0]), np.array([2.0]), np.array([3.0]), 4.0)
    p = ModelParams(0.1, 1.0, KernelSpec("exp", 1.0), 1.0, 0.5, 1.0, 0.5)
    iv = link_intervals(_state(p, x), [SourcedExposure(0, 0, PRIMARY)])
    assert iv.tolist() == [[0.0, 1.0]]


def test_residuals_stay_in_their_intervals(rng):
    p = small_params("pow")
    x = simulate(p, HostPopulation.uniform(25, 10.0, rng), rng)
    st = _state(p, x)
    src = impute_sources(st, rng)
    iv = link_intervals(st, src)
    r = ilr_residuals(st, src, rng)
    assert len(r) == len(src) == int(np.sum(np.isfinite(x.exposure) & ~x.seed_mask))
    assert np.all((iv[:, 0] <= r) & (r <= iv[:, 1]))
    assert np.all((0 <= iv) & (iv <= 1))


def test_duplicate_sources_rejected(rng):
    p = small_params()
    x = simulate(p, HostPopulation.uniform(8, 5.0, rng), rng)
    st = _state(p, x)
    src = impute_sources(st, rng)
    with pytest.raises(ValueError):
        ilr_residuals(st, src + src[:1], rng)


def test_residuals_uniform_at_truth():
    # pooled over independent epidemics at the true parameters the residuals are U(0,1)
    p = small_params("gauss")
    rng = np.random.default_rng(21)
    r = []
    for _ in range(40):
        x = simulate(p, HostPopulation.uniform(20, 10.0, rng), rng)
        st = _state(p, x)
        r.append(ilr_residuals(st, impute_sources(st, rng), rng))
    assert anderson_darling(np.concatenate(r))[1] > 0.001


def test_fixed_stream_gives_single_pvalue(monkeypatch, rng):
    stream = np.random.default_rng(5).random(30)
    monkeypatch.setattr(ilr_mod, "ilr_residuals", lambda state, sources, rng=None: stream)
    p = small_params()
    x = simulate(p, HostPopulation.uniform(10, 5.0, rng), rng)
    rep = ilr_test([_state(p, x)] * 4, rng=1)
    assert rep.E_hat_p == pytest.approx(anderson_darling(stream)[1], rel=1e-15)
    assert rep.n_samples == 4 and rep.test == "ILR" and rep.M0 == "exp"


def test_thread_count_does_not_change_result(rng):
    p = small_params()
    x = simulate(p, HostPopulation.uniform(15, 5.0, rng), rng)
    samples = [_state(p, x)] * 6
    a = ilr_test(samples, rng=3, threads=1)
    b = ilr_test(samples, rng=3, threads=3)
    assert a.p_values == b.p_values


def test_empty_samples():
    with pytest.raises(ValueError):
        ilr_test([], rng=0)
