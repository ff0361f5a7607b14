import numpy as np
import pytest

from ddbranch import kernels, simulate
from ddbranch.offspring import make_model
from ddbranch.simulate import simulate_coupled

needs_cython = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="extension not built")


def test_numpy_backend_always_available():
    assert "numpy" in kernels.BACKENDS
    assert kernels.get_kernel("numpy") is kernels.BACKENDS["numpy"]
    assert kernels.get_kernel() is kernels.coupled_generation


def test_unknown_backend():
    with pytest.raises(KeyError):
        kernels.get_kernel("fortran")


@pytest.mark.parametrize("name", sorted(kernels.BACKENDS))
def test_kernel_matches_quantile(name, any_model):
    kernel = kernels.get_kernel(name)
    u = np.random.default_rng(2).random(5000)
    x = 0.7
    zs, ys = kernel(any_model.cdf_table_at_zero, any_model.cdf_table(x), u, 3000)
    assert ys == any_model.quantile(0.0, u).sum()
    assert zs == any_model.quantile(x, u[:3000]).sum()


@pytest.mark.parametrize("name", sorted(kernels.BACKENDS))
def test_kernel_edge_cases(name, ricker):
    kernel = kernels.get_kernel(name)
    t0, t1 = ricker.cdf_table_at_zero, ricker.cdf_table(1.0)
    assert kernel(t0, t1, np.empty(0), 0) == (0, 0)
    u = np.array([0.0, 0.5, np.nextafter(1.0, 0.0)])
    assert kernel(t0, t1, u, 10)[1] == kernel(t0, t1, u, 0)[1]
    assert kernel(t0, t1, u, -4)[0] == 0
    # the largest double below 1 lands on the last atom of each table
    assert kernel(t0, t1, u[2:], 1) == (len(t1) - 1, len(t0) - 1)


@needs_cython
def test_kernel_rejects_tables_not_ending_at_one():
    kernel = kernels.get_kernel("cython")
    with pytest.raises(ValueError):
        kernel(np.array([0.5, 0.9]), np.array([1.0]), np.array([0.1]), 1)


@needs_cython
@pytest.mark.parametrize("family", ["geometric", "ricker", "binary_splitting", "density_independent"])
def test_backends_agree_on_paths(family):
    m = make_model(family)
    for r in range(30):
        a = simulate_coupled(m, 5000, 13, seed=31, key=(r,), backend="cython")
        b = simulate_coupled(m, 5000, 13, seed=31, key=(r,), backend="numpy")
        np.testing.assert_array_equal(a.z, b.z)
        np.testing.assert_array_equal(a.y, b.y)


@needs_cython
def test_backends_agree_on_random_tables():
    rng = np.random.default_rng(8)
    c, p = kernels.get_kernel("cython"), kernels.get_kernel("numpy")
    for _ in range(50):
        n = int(rng.integers(1, 400))
        t0 = np.sort(rng.random(n))
        t0[-1] = 1.0
        t1 = np.maximum.accumulate(np.minimum(t0 + rng.random(n) * 0.1, 1.0))
        u = rng.random(int(rng.integers(0, 3000)))
        n_z = int(rng.integers(0, len(u) + 1))
        assert c(t0, t1, u, n_z) == p(t0, t1, u, n_z)


def test_chunking_does_not_change_paths(geometric, monkeypatch):
    ref = simulate_coupled(geometric, 20_000, 14, seed=5)
    monkeypatch.setattr(simulate, "CHUNK", 1000)
    small = simulate_coupled(geometric, 20_000, 14, seed=5)
    np.testing.assert_array_equal(ref.z, small.z)
    np.testing.assert_array_equal(ref.y, small.y)
