import math

import numpy as np
import pytest
from scipy import optimize, stats

from kernelcrit.criticism import maximize_loglik
from kernelcrit.criticism.mle import fit_sojourn, sojourn_data
from kernelcrit.likelihood import InfectionStats, PartialStats, extract_partial_data, full_loglik
from kernelcrit.model import HostPopulation, KernelSpec, ModelParams
from kernelcrit.simulator import simulate

from conftest import small_params


def test_background_only_rate_is_analytic():
    p = ModelParams(0.05, 0.0, KernelSpec("exp", 1.0), 2.0, 1.0, 1.5, 0.5)
    rng = np.random.default_rng(1)
    x = simulate(p, HostPopulation.uniform(40, 10.0, rng), rng, stop=15.0)
    e = x.exposure
    n_exp = int(np.sum(e <= x.t_max))
    a_hat = n_exp / math.fsum(np.minimum(e, x.t_max))
    res = maximize_loglik("full", x, "exp", fixed={"beta": 0.0, "kappa": 1.0}, rng=0)
    assert res.converged
    assert res.theta["alpha"] == pytest.approx(a_hat, rel=1e-4)


def test_partial_kappa_matches_grid():
    p = small_params("exp")
    rng = np.random.default_rng(2)
    x = simulate(p, HostPopulation.uniform(40, 10.0, rng), rng)
    st = PartialStats(extract_partial_data(x))
    res = maximize_loglik("partial", st, "exp", rng=0)
    grid = np.linspace(0.01, 3.0, 500)

    def profile(k):
        r = optimize.minimize_scalar(lambda la: -st.loglik(p.family, math.exp(la), 1.0, k),
                                     bounds=(-15, 5), method="bounded", options={"xatol": 1e-8})
        return -r.fun

    prof = np.array([profile(k) for k in grid])
    k_grid = grid[np.argmax(prof)]
    assert abs(res.theta["kappa"] - k_grid) <= 2 * (grid[1] - grid[0])
    assert res.loglik_at_max >= prof.max() - 1e-6
    assert res.theta["beta"] == 1.0


def test_full_fit_not_worse_than_init():
    p = small_params("gauss")
    rng = np.random.default_rng(3)
    x = simulate(small_params("exp"), HostPopulation.uniform(30, 10.0, rng), rng)
    res = maximize_loglik("full", x, "gauss", init=p, rng=1)
    assert res.loglik_at_max >= full_loglik(p, x)
    assert res.loglik_at_max == pytest.approx(full_loglik(res.params(), x), abs=1e-9)
    assert res.family.value == "gauss" and res.evaluations > 0


def test_sojourn_fit_matches_scipy():
    rng = np.random.default_rng(4)
    d = stats.gamma.rvs(3.0, scale=0.7, size=300, random_state=rng)
    res = fit_sojourn(d, np.empty(0), np.random.default_rng(0))
    a, _, s = stats.gamma.fit(d, floc=0)
    assert res.theta["mean"] == pytest.approx(a * s, rel=1e-4)
    assert res.theta["var"] == pytest.approx(a * s * s, rel=1e-3)


def test_sojourn_data_split():
    p = small_params("exp")
    rng = np.random.default_rng(5)
    x = simulate(p, HostPopulation.uniform(30, 10.0, rng), rng, stop=6.0)
    done, cens = sojourn_data(x, "i")
    assert len(done) + len(cens) == np.sum(np.isfinite(x.infection))
    assert np.all(cens >= 0) and np.all(done > 0)


def test_infection_stats_consistent_with_fit():
    p = small_params("pow")
    rng = np.random.default_rng(6)
    x = simulate(p, HostPopulation.uniform(30, 10.0, rng), rng)
    res = maximize_loglik("full", x, "pow", init=p, rng=0)
    st = InfectionStats(x)
    th = res.theta
    inf = st.loglik(p.family, th["alpha"], th["beta"], th["kappa"])
    assert inf >= st.loglik(p.family, p.alpha, p.beta, p.kappa)


def test_unknown_objective():
    p = small_params()
    x = simulate(p, HostPopulation.uniform(5, 5.0, np.random.default_rng(0)), 0)
    with pytest.raises(ValueError):
        maximize_loglik("bogus", x, "exp")
