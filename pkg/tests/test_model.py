import math

import numpy as np
import pytest

from kernelcrit.model import (NEVER, HostPopulation, InvalidTrajectory, KernelFamily, KernelSpec, ModelParams,
                              Trajectory, WindowUnattainable, exposure_rate, kernel_eval, total_pressure, truncate,
                              window_count)
from kernelcrit.simulator import simulate

from conftest import small_params


@pytest.mark.parametrize("family", list(KernelFamily))
def test_kernel_is_one_at_zero_and_non_increasing(family):
    k = KernelSpec(family, 0.7)
    d = np.linspace(0, 50, 200)
    v = k(d)
    assert kernel_eval(k, 0.0) == 1.0 or family is KernelFamily.POWER_LAW
    assert np.all(np.diff(v) <= 0)


def test_kernel_values():
    assert kernel_eval(KernelSpec("exp", 0.03), 100.0) == pytest.approx(math.exp(-3))
    assert kernel_eval(KernelSpec("gauss", 0.01), 10.0) == pytest.approx(math.exp(-1))
    assert kernel_eval(KernelSpec("pow", 2.0), 3.0) == pytest.approx(0.1)


def test_power_law_at_zero_distance():
    # (1 + 0^k)^-1 = 1 for k > 0
    assert kernel_eval(KernelSpec("pow", 1.3), 0.0) == 1.0


def test_kernel_rejects_bad_input():
    with pytest.raises(ValueError):
        KernelSpec("exp", 0.0)
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec("exp", 1.0), -1.0)
    with pytest.raises(ValueError):
        KernelSpec("cauchy", 1.0)


def test_gamma_shape_rate(original):
    assert original.i_shape == pytest.approx(3.6598, abs=2e-4)  # 3.65966 exactly
    assert original.i_rate == pytest.approx(2.0653, abs=1e-4)
    assert original.e_shape == pytest.approx(10.0)
    assert original.e_rate == pytest.approx(2.0)


def test_params_validation_and_roundtrip(original):
    with pytest.raises(ValueError):
        ModelParams(-1e-3, 1.0, original.kernel, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        ModelParams(1e-3, 1.0, original.kernel, 1, 0.0, 1, 1)
    assert ModelParams.from_dict(original.to_dict()) == original
    assert ModelParams.from_vector("exp", original.as_vector()) == original


def test_population_invariants(rng):
    pop = HostPopulation.uniform(20, 100.0, rng)
    assert pop.n == 20
    with pytest.raises(ValueError):
        pop.coords[0, 0] = 5.0
    with pytest.raises(ValueError):
        HostPopulation(np.array([[0.0, 101.0]]), 100.0)
    D = pop.distances
    assert np.allclose(D, D.T) and np.all(np.diag(D) == 0)
    assert pop.distance(3, 7) == pytest.approx(D[3, 7])
    K = pop.kernel_matrix(KernelSpec("exp", 0.1))
    assert np.all(np.diag(K) == 0)


def test_exposure_rate_and_total_pressure():
    pop = HostPopulation(np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]]), 10.0)
    p = ModelParams(0.5, 2.0, KernelSpec("exp", 0.2), 1, 1, 1, 1)
    assert exposure_rate(p, pop, 0, []) == 0.5
    assert exposure_rate(p, pop, 0, [1]) == pytest.approx(0.5 + 2 * math.exp(-1.0))
    assert total_pressure(p, pop, [0, 2], [1]) == pytest.approx(1.0 + 4 * math.exp(-1.0))
    assert total_pressure(p, pop, [], [1]) == 0.0
    with pytest.raises(ValueError):
        total_pressure(p, pop, [0, 1], [1])


def _traj(pop, e, i, r, T, seeds=()):
    return Trajectory(pop, np.array(e, float), np.array(i, float), np.array(r, float), T, seeds)


def test_trajectory_validation():
    pop = HostPopulation(np.zeros((2, 2)), 1.0)
    _traj(pop, [0.5, NEVER], [1.0, NEVER], [2.0, NEVER], 3.0).validate()
    with pytest.raises(InvalidTrajectory):
        _traj(pop, [1.5, NEVER], [1.0, NEVER], [2.0, NEVER], 3.0).validate()
    with pytest.raises(InvalidTrajectory):
        _traj(pop, [NEVER, NEVER], [1.0, NEVER], [NEVER, NEVER], 3.0).validate()
    with pytest.raises(InvalidTrajectory):
        _traj(pop, [0.5, NEVER], [1.0, NEVER], [4.0, NEVER], 3.0).validate()
    # exposure with nobody infectious requires alpha > 0
    with pytest.raises(InvalidTrajectory):
        _traj(pop, [0.5, NEVER], [1.0, NEVER], [2.0, NEVER], 3.0).validate(alpha=0.0)
    _traj(pop, [0.0, 0.5], [0.0, 1.0], [2.0, NEVER], 3.0, seeds=(0,)).validate(alpha=0.0)


def test_simulated_trajectories_valid(rng):
    for fam in ("exp", "pow", "gauss"):
        p = small_params(fam)
        x = simulate(p, HostPopulation.uniform(12, 10.0, rng), rng)
        x.validate(alpha=p.alpha)


def test_window_count():
    assert window_count(0.7, 150) == 105
    assert window_count(0.4, 150) == 60
    assert window_count(1.0, 7) == 7
    assert window_count(0.01, 10) == 1
    with pytest.raises(ValueError):
        window_count(0.0, 10)


def test_truncate(rng, original):
    pop = HostPopulation.uniform(50, 2000.0, rng)
    x = simulate(original, pop, rng)
    for f in (1.0, 0.7, 0.4):
        y, t_cut = truncate(x, f)
        assert y.n_infected == window_count(f, 50)
        assert y.t_max == t_cut
        y.validate()
        assert np.all(y.removal[np.isfinite(y.removal)] <= t_cut)
    part = x.censor(truncate(x, 0.4)[1])
    with pytest.raises(WindowUnattainable):
        truncate(part, 0.7)


def test_permuted_and_scaled(rng):
    p = small_params()
    x = simulate(p, HostPopulation.uniform(8, 10.0, rng), rng)
    perm = rng.permutation(8)
    xp = x.permuted(perm)
    assert np.array_equal(xp.exposure, x.exposure[perm])
    xs = x.scaled(2.0)
    assert xs.t_max == 2 * x.t_max
