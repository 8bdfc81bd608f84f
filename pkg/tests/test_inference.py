import math

import numpy as np
import pytest
from scipy import integrate, stats

from kernelcrit.criticism.mle import _profile_rates
from kernelcrit.inference import (ChainState, Fixed, GammaMeanVar, ImpossibleState, PriorSpec, UniformPositive,
                                  impute_sources, log_posterior, run_chain, update_exposures, update_params)
from kernelcrit.likelihood import InfectionStats, full_loglik
from kernelcrit.model import NEVER, HostPopulation, InvalidTrajectory, KernelSpec, ModelParams, ObservedData, Trajectory, truncate
from kernelcrit.simulator import PRIMARY, simulate
from kernelcrit.sojourn import gamma_logpdf, gamma_logsf

from conftest import ORIGINAL


def test_default_priors():
    pr = PriorSpec()
    assert isinstance(pr.alpha, UniformPositive) and pr.alpha.upper == np.finfo(float).max
    assert pr.beta == GammaMeanVar(1.0, 100.0) and pr.kappa == GammaMeanVar(1.0, 100.0)
    assert pr.free == tuple(range(7))
    with pytest.raises(ValueError):
        pr.alpha.sample(np.random.default_rng(0))


def test_gamma_prior_logpdf():
    g = GammaMeanVar(1.0, 100.0)
    assert g.logpdf(2.0) == pytest.approx(stats.gamma.logpdf(2.0, 0.01, scale=100.0))
    assert g.logpdf(0.0) == -math.inf


@pytest.fixture(scope="module")
def original_data():
    rng = np.random.default_rng(4)
    pop = HostPopulation.uniform(60, 2000.0, rng)
    x = simulate(ORIGINAL, pop, rng)
    return x, truncate(x, 0.7)[0]


def test_chain_is_deterministic_and_finite(original_data):
    _, y = original_data
    a = run_chain(y, PriorSpec(), "exp", 120, seed=5)
    b = run_chain(y, PriorSpec(), "exp", 120, seed=5)
    assert len(a) == 96
    for s, t in zip(a, b):
        assert np.array_equal(s.params.as_vector(), t.params.as_vector())
        assert np.array_equal(s.aug.exposure, t.aug.exposure)
        assert math.isfinite(s.log_posterior)


def test_state_invariants(original_data):
    _, y = original_data
    res = run_chain(y, PriorSpec(), "gauss", 1000, seed=1, drift_every=250)
    assert res.max_drift < 1e-8
    for s in res.samples[::50]:
        assert np.array_equal(s.aug.infection, y.infection, equal_nan=True)
        assert np.array_equal(s.aug.removal, y.removal, equal_nan=True)
        s.aug.validate(alpha=s.params.alpha)
        assert s.log_posterior == pytest.approx(log_posterior(s.params, s.aug, PriorSpec()), abs=1e-8)


def test_occult_exposures_appear(original_data):
    _, y = original_data
    res = run_chain(y, PriorSpec(), "exp", 300, seed=2)
    assert max(s.n_occult for s in res) > 0
    assert res.acceptance["add"] > 0 and res.acceptance["delete"] > 0


def test_zero_iterations(original_data):
    _, y = original_data
    assert len(run_chain(y, PriorSpec(), "exp", 0, seed=1)) == 0


def test_invalid_observed_data_rejected(original_data):
    _, y = original_data
    bad = ObservedData(y.population, y.infection.copy(), y.removal.copy(), y.t_max)
    k = int(np.flatnonzero(np.isfinite(bad.removal))[0])
    bad.removal[k] = bad.infection[k] - 1.0
    with pytest.raises(InvalidTrajectory):
        run_chain(bad, PriorSpec(), "exp", 10, seed=1)


def test_kappa_posterior_mode_near_grid_mle():
    rng = np.random.default_rng(8)
    p = ModelParams(0.002, 3.0, KernelSpec("exp", 0.03), 5.0, 2.5, 1.772, 0.858)
    x = simulate(p, HostPopulation.uniform(50, 1000.0, rng), rng)
    flat = PriorSpec(beta=UniformPositive(), kappa=UniformPositive())
    res = run_chain(x, flat, "exp", 3000, seed=3, augment=False, init=p)
    kap = np.array([s.params.kappa for s in res])
    kde = stats.gaussian_kde(kap)
    grid = np.linspace(kap.min(), kap.max(), 400)
    mode = grid[np.argmax(kde(grid))]
    st = InfectionStats(x)
    kgrid = np.linspace(0.005, 0.1, 200)
    prof = []
    for k in kgrid:
        s, b = st.kernel_sums(p.family, k)
        a_hat, b_hat = _profile_rates(s, st.susceptible_time, b, p.alpha, p.beta)
        prof.append(st.loglik(p.family, a_hat, b_hat, k))
    mle = kgrid[int(np.argmax(prof))]
    assert abs(mode - mle) < 2 * kap.std()


def test_prior_only_kappa_chain():
    # beta fixed at 0: the likelihood does not depend on kappa, so kappa samples its prior
    y = ObservedData(HostPopulation(np.array([[0.0, 0.0], [1.0, 1.0]]), 2.0), np.array([3.0, NEVER]),
                     np.array([4.0, NEVER]), 5.0)
    p = ModelParams(0.1, 0.0, KernelSpec("exp", 2.0), 2.0, 1.0, 1.0, 0.5)
    pr = PriorSpec(*(Fixed(v) for v in p.as_vector()))
    pr = PriorSpec(pr.alpha, pr.beta, GammaMeanVar(2.0, 0.5), pr.mu_e, pr.var_e, pr.mu_i, pr.var_i)
    res = run_chain(y, pr, "exp", 20000, seed=9, init=p, augment=False, thin=10)
    kap = np.array([s.params.kappa for s in res])
    assert kap.mean() == pytest.approx(2.0, abs=0.06)
    assert kap.var() == pytest.approx(0.5, rel=0.15)


def _one_host_posterior(alpha, mu, var, ti, lo, grid=20001):
    t = np.linspace(lo, ti, grid)
    logd = -alpha * t + gamma_logpdf(ti - t, mu, var)
    d = np.exp(logd - logd.max())
    cdf = integrate.cumulative_trapezoid(d, t, initial=0.0)
    return t, cdf / cdf[-1]


def test_move_matches_conditional_density():
    mu, var, ti = 5.0, 0.25, 10.0
    p = ModelParams(0.05, 0.0, KernelSpec("exp", 1.0), mu, var, 1.0, 0.5)
    y = ObservedData(HostPopulation(np.array([[0.0, 0.0]]), 1.0), np.array([ti]), np.array([11.0]), 12.0)
    res = run_chain(y, PriorSpec.point_mass(p), "exp", 30000, seed=4, init=p, thin=15, burnin=100)
    e = np.array([s.aug.exposure[0] for s in res])
    lo = ti - (mu + 3 * math.sqrt(var))
    t, cdf = _one_host_posterior(p.alpha, mu, var, ti, lo)
    ks = stats.kstest(e, lambda v: np.interp(v, t, cdf))
    assert ks.pvalue > 0.001
    assert abs(np.median(e) - (ti - mu)) < 0.2


def test_add_delete_marginal_matches_binomial():
    # beta = 0 makes the four unobserved hosts independent: each carries an
    # occult exposure with probability q
    alpha, T, mu, var = 0.05, 10.0, 5.0, 2.5
    p = ModelParams(alpha, 0.0, KernelSpec("exp", 1.0), mu, var, 1.0, 0.5)
    coords = np.array([[0.0, 0.0], [1, 0], [2, 0], [3, 0], [4, 0]], dtype=float)
    inf = np.array([6.0, NEVER, NEVER, NEVER, NEVER])
    rem = np.array([7.0, NEVER, NEVER, NEVER, NEVER])
    y = ObservedData(HostPopulation(coords, 5.0), inf, rem, T)
    occ_mass = integrate.quad(lambda t: alpha * math.exp(-alpha * t) * math.exp(gamma_logsf(T - t, mu, var)), 0, T)[0]
    q = occ_mass / (occ_mass + math.exp(-alpha * T))
    res = run_chain(y, PriorSpec.point_mass(p), "exp", 20000, seed=6, init=p, thin=10, burnin=0)
    counts = np.bincount([s.n_occult for s in res], minlength=5)
    expected = stats.binom.pmf(np.arange(5), 4, q) * len(res)
    assert stats.chisquare(counts, expected).pvalue > 0.001


def test_small_scale_accepts_everything(original_data):
    x, _ = original_data
    st = ChainState(ORIGINAL, x, log_posterior(ORIGINAL, x, PriorSpec()))
    rng = np.random.default_rng(0)
    new = update_params(st, rng, scales=np.full(7, 1e-12))
    assert np.allclose(new.params.as_vector(), st.params.as_vector(), rtol=1e-9)
    assert not np.array_equal(new.params.as_vector(), st.params.as_vector())


def test_update_exposures_keeps_observed(original_data):
    _, y = original_data
    res = run_chain(y, PriorSpec(), "exp", 5, seed=1)
    s = update_exposures(res[-1], np.random.default_rng(1), n_moves=500)
    assert np.array_equal(s.aug.infection, y.infection)
    assert s.log_posterior == pytest.approx(log_posterior(s.params, s.aug, PriorSpec()), abs=1e-8)


def _source_state(alpha):
    # host 0 exposed at t=1; hosts 1 and 2 infectious with kernel weights 1 and 3
    coords = np.array([[0.0, 0.0], [math.log(3.0), 0.0], [0.0, 0.0]])
    pop = HostPopulation(coords, 2.0)
    x = Trajectory(pop, np.array([1.0, 0.0, 0.0]), np.array([2.0, 0.0, 0.0]), np.array([NEVER, 3.0, 3.0]), 3.0,
                   seeds=(1, 2))
    p = ModelParams(alpha, 1.0, KernelSpec("exp", 1.0), 2.0, 1.0, 1.0, 0.5)
    return ChainState(p, x, 0.0)


def test_impute_sources_binomial():
    st = _source_state(0.0)
    rng = np.random.default_rng(0)
    n = 10_000
    hits = sum(impute_sources(st, rng)[0].source == 2 for _ in range(n))
    assert abs(hits / n - 0.75) < 3 * math.sqrt(0.75 * 0.25 / n)


def test_impute_sources_primary_and_impossible():
    pop = HostPopulation(np.array([[0.0, 0.0], [1.0, 0.0]]), 2.0)
    x = Trajectory(pop, np.array([1.0, NEVER]), np.array([2.0, NEVER]), np.array([NEVER, NEVER]), 3.0)
    p = ModelParams(0.1, 1.0, KernelSpec("exp", 1.0), 2.0, 1.0, 1.0, 0.5)
    assert impute_sources(ChainState(p, x, 0.0), 0)[0].source == PRIMARY
    with pytest.raises(ImpossibleState):
        impute_sources(ChainState(ModelParams(0.0, *p.as_vector()[1:2], p.kernel, 2.0, 1.0, 1.0, 0.5), x, 0.0), 0)
