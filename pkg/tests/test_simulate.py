import math

import numpy as np
import pytest
from scipy import stats

from ddbranch.errors import DomainError, PopulationOverflow
from ddbranch.offspring import make_model
from ddbranch.simulate import (
    CoupledPath,
    deterministic_path,
    estimate_w,
    extend_gw,
    fluctuation_variance,
    gaussian_fluctuation_path,
    horizon,
    make_rng,
    simulate_coupled,
    simulate_density,
)


@pytest.mark.parametrize(
    "K,rho,n1,frac",
    [(1024, 2.0, 10, 0.0), (1000, 2.0, 9, 0.965784284662087), (2, 2.0, 1, 0.0),
     (3**7, 3.0, 7, 0.0), (10**6, 10.0, 6, 0.0)],
)
def test_horizon(K, rho, n1, frac):
    h = horizon(K, rho)
    assert h.n1 == n1
    assert h.frac == pytest.approx(frac, abs=1e-12)
    assert 0 <= h.frac < 1
    assert rho ** (h.n1 + h.frac) == pytest.approx(K, rel=1e-9)


def test_horizon_domain():
    with pytest.raises(DomainError):
        horizon(1, 2.0)
    with pytest.raises(DomainError):
        horizon(100, 1.0)


def test_linear_model_paths_coincide(linear):
    for seed in range(20):
        p = simulate_coupled(linear, 500, 9, seed)
        np.testing.assert_array_equal(p.z, p.y)


@pytest.mark.parametrize("family", ["geometric", "ricker", "binary_splitting"])
def test_dominance_and_absorption(family):
    m = make_model(family)
    for seed in range(200):
        p = simulate_coupled(m, 300, 12, seed)
        assert p.z[0] == p.y[0] == 1
        assert np.all(p.z <= p.y)
        for arr in (p.z, p.y):
            dead = np.flatnonzero(arr == 0)
            if dead.size:
                assert np.all(arr[dead[0]:] == 0)


def test_path_fields(ricker):
    p = simulate_coupled(ricker, 1000, 12, seed=4, key=(1000, 7))
    assert isinstance(p, CoupledPath)
    assert p.capacity == 1000 and p.n_steps == 12 and p.seed == 4 and p.key == (1000, 7)
    np.testing.assert_allclose(p.z_density, p.z / 1000)
    hit = p.extinct_z_at
    assert hit is None or (p.z[hit] == 0 and np.all(p.z[:hit] > 0))


def test_reproducibility(geometric):
    a = simulate_coupled(geometric, 4096, 12, seed=99, key=(4096, 3))
    b = simulate_coupled(geometric, 4096, 12, seed=99, key=(4096, 3))
    c = simulate_coupled(geometric, 4096, 12, seed=99, key=(4096, 4))
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.y, b.y)
    assert not (np.array_equal(a.y, c.y) and np.array_equal(a.z, c.z))


def test_streams_are_independent_of_order():
    first = make_rng(5, (10, 2)).random(4)
    make_rng(5, (10, 1)).random(100)
    np.testing.assert_array_equal(make_rng(5, (10, 2)).random(4), first)


def test_initial_colony(ricker):
    p = simulate_coupled(ricker, 10_000, 3, seed=1, z0=50)
    assert p.z[0] == p.y[0] == 50


def test_argument_errors(ricker):
    with pytest.raises(DomainError):
        simulate_coupled(ricker, 100, 0, seed=1)
    with pytest.raises(DomainError):
        simulate_coupled(ricker, 0, 5, seed=1)
    with pytest.raises(DomainError):
        simulate_coupled(ricker, 100, 5, seed=1, z0=0)


def test_population_cap(linear):
    with pytest.raises(PopulationOverflow, match="shorter horizon"):
        simulate_coupled(linear, 100, 40, seed=3, z0=100, population_cap=10_000)


def test_extinction_fraction_geometric(geometric):
    K = 10_000
    n1 = horizon(K, 2.0).n1
    dead = sum(simulate_coupled(geometric, K, n1, seed=2024, key=(K, r)).z[n1] == 0
               for r in range(10_000))
    assert abs(dead / 10_000 - 0.5) < 0.02


def test_galton_watson_mean(geometric):
    n, reps = 8, 10_000
    y = np.array([simulate_coupled(geometric, 10**9, n, seed=8, key=(r,)).y[n] for r in range(reps)])
    se = y.std(ddof=1) / math.sqrt(reps)
    assert abs(y.mean() - 2.0**n) < 3 * se


def test_conditional_increment_law(ricker):
    # with Z_{n-1} = z frozen at density x, the offspring total is a z-fold convolution
    K, z0 = 1000, 400
    totals = np.array([simulate_coupled(ricker, K, 1, seed=6, key=(r,), z0=z0).z[1]
                       for r in range(3000)])
    x = z0 / K
    mean, var = z0 * ricker.mean(x), z0 * ricker.variance(x)
    standardized = (totals - mean) / math.sqrt(var)
    assert stats.kstest(standardized, "norm").pvalue > 0.001


def test_estimate_w_examples():
    path = CoupledPath(capacity=10, z=np.array([1, 2, 4, 8]), y=np.array([1, 2, 4, 8]), seed=0)
    assert estimate_w(path, 2.0, 3) == 1.0
    dead = CoupledPath(capacity=10, z=np.array([1, 0, 0]), y=np.array([1, 0, 0]), seed=0)
    assert estimate_w(dead, 2.0, 2) == 0.0
    with pytest.raises(DomainError):
        estimate_w(path, 2.0, 4)


def test_martingale_estimate_converges(linear):
    n, reps = 10, 1000
    diffs = []
    for r in range(reps):
        p = simulate_coupled(linear, 10**9, n + 5, seed=17, key=(r,))
        diffs.append(estimate_w(p, 2.0, n + 5) - estimate_w(p, 2.0, n))
    rms = math.sqrt(np.mean(np.square(diffs)))
    # Var(W_{n+5} - W_n) = sigma^2 / (rho(rho-1)) (rho^-n - rho^-(n+5)) for a GW process
    sigma2 = linear.variance(0.0)
    expected = math.sqrt(sigma2 / 2.0 * (2.0**-n - 2.0 ** -(n + 5)))
    assert rms == pytest.approx(expected, rel=0.15)
    assert rms < math.sqrt(sigma2 / 2.0) * 2.0 ** (-n / 2)


def test_extend_gw(geometric):
    rng = np.random.default_rng(0)
    assert extend_gw(geometric, 0, 5, rng) == 0
    assert extend_gw(geometric, 7, 0, rng) == 7
    big = extend_gw(geometric, 10**6, 3, rng)
    assert big == pytest.approx(8 * 10**6, rel=0.01)
    with pytest.raises(PopulationOverflow):
        extend_gw(geometric, 10**6, 3, rng, population_cap=10**6)


def test_density_fast_path_tracks_deterministic_map(ricker):
    K = 10**6
    z = simulate_density(ricker, K, K // 5, 6, seed=1)
    x = deterministic_path(ricker, 0.2, 6)
    np.testing.assert_allclose(z / K, x, atol=5e-3)


def test_deterministic_path_delegates(ricker):
    np.testing.assert_array_equal(deterministic_path(ricker, 1.0, 4), np.ones(5))


def test_gaussian_fluctuation_path(ricker):
    a = gaussian_fluctuation_path(ricker, 0.3, 8, seed=12)
    b = gaussian_fluctuation_path(ricker, 0.3, 8, seed=12)
    np.testing.assert_array_equal(a, b)
    assert a[0] == 0.0 and len(a) == 9
    with pytest.raises(DomainError):
        gaussian_fluctuation_path(ricker, 0.0, 5, seed=1)


def test_fluctuation_variance_at_fixed_point(ricker):
    n, reps = 10, 10_000
    paths = np.array([gaussian_fluctuation_path(ricker, 1.0, n, seed=3, key=(r,)) for r in range(reps)])
    v = np.zeros(n + 1)
    fp, s2 = ricker.f_prime(1.0), ricker.variance(1.0)
    for k in range(1, n + 1):
        v[k] = fp**2 * v[k - 1] + s2
    np.testing.assert_allclose(fluctuation_variance(ricker, 1.0, n), v, rtol=1e-12)
    np.testing.assert_allclose(paths[:, 1:].var(axis=0), v[1:], rtol=0.05)
