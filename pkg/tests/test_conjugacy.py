import math

import numpy as np
import pytest

from ddbranch.conjugacy import (
    ConjugacyEvaluator,
    build_table,
    h_eval,
    h_inverse,
    h_n,
    h_prime,
    h_second,
    increment_ratios,
    iterate_map,
    semiconjugacy_residual,
)
from ddbranch.errors import ConvergenceError, DomainError
from ddbranch.offspring import make_model

# f^60(x / 2^60) for the Ricker map x 2^(1-x), evaluated with 60-digit mpmath
RICKER_H60_AT_1 = 0.5684125664132947313
RICKER_H60_AT_08 = 0.5004884438786654511
GEOMETRIC_H60_AT_1 = 0.5279233262026251322


def test_iterate_map_examples(ricker, any_model):
    np.testing.assert_array_equal(iterate_map(ricker, 1.0, 5), np.ones(6))
    np.testing.assert_array_equal(iterate_map(any_model, 0.0, 3), np.zeros(4))
    path = iterate_map(ricker, 0.1, 20)
    assert len(path) == 21 and path[0] == 0.1
    assert np.all(np.diff(path[:6]) > 0)
    assert 0.99 < path[-1] < 1.01


def test_iterate_map_zero_steps(geometric):
    np.testing.assert_array_equal(iterate_map(geometric, 0.3, 0), [0.3])


def test_h_eval_identity_case(linear):
    x = np.array([0.0, 0.3, 1.7, 12.0])
    np.testing.assert_array_equal(h_eval(linear, x), x)


def test_h_eval_at_zero(any_model):
    assert h_eval(any_model, 0.0) == 0.0


@pytest.mark.parametrize(
    "family,x,oracle",
    [("ricker", 1.0, RICKER_H60_AT_1), ("ricker", 0.8, RICKER_H60_AT_08),
     ("geometric", 1.0, GEOMETRIC_H60_AT_1)],
)
def test_h_eval_matches_high_precision_iteration(family, x, oracle):
    assert abs(h_eval(make_model(family), x, 1e-10) - oracle) < 1e-9


def test_h_n_definition(ricker):
    x = 0.6
    assert h_n(ricker, x, 0) == x
    assert h_n(ricker, x, 3) == pytest.approx(iterate_map(ricker, x / 8, 3)[-1], rel=1e-15)


def test_increment_ratios_approach_inverse_rho(ricker):
    r = increment_ratios(ricker, 1.0, n_max=40)
    settled = r[15:30]
    assert np.all(np.abs(settled - 0.5) < 0.05)


def test_h_eval_convergence_failure(ricker):
    with pytest.raises(ConvergenceError) as info:
        h_eval(ricker, 1.0, 1e-10, max_depth=3)
    assert info.value.last_increment > 0


def test_h_eval_rejects_negative(ricker):
    with pytest.raises(DomainError):
        h_eval(ricker, -0.5)


def test_h_prime_examples(any_model, linear):
    assert h_prime(any_model, 0.0) == 1.0
    np.testing.assert_allclose(h_prime(linear, np.array([0.5, 2.0, 9.0])), 1.0, atol=1e-15)


def test_h_prime_finite_difference(ricker):
    x, h = 0.8, 1e-6
    fd = (h_eval(ricker, x + h, 1e-13) - h_eval(ricker, x - h, 1e-13)) / (2 * h)
    assert abs(h_prime(ricker, x) - fd) < 1e-5


def test_h_second_examples(linear):
    np.testing.assert_allclose(h_second(linear, np.array([0.0, 0.5, 3.0])), 0.0, atol=0)


def test_h_second_finite_difference(ricker):
    x, h = 0.5, 1e-5
    fd = (h_prime(ricker, x + h, 1e-13) - h_prime(ricker, x - h, 1e-13)) / (2 * h)
    assert abs(h_second(ricker, x) - fd) < 1e-4


@pytest.mark.parametrize("family", ["ricker", "geometric"])
def test_h_second_at_zero(family):
    # H''(0) = f''(0) / (rho (rho - 1)), not 0: differentiate H(rho x) = f(H(x)) twice at 0
    m = make_model(family)
    closed = m.f_second(0.0) / (m.rho * (m.rho - 1))
    h = 1e-5
    fd = (h_prime(m, h, 1e-13) - 1.0) / h
    assert h_second(m, 0.0) == pytest.approx(closed, rel=1e-9)
    assert abs(fd - closed) < 1e-4


def test_ricker_h_second_at_zero_value():
    assert h_second(make_model("ricker"), 0.0) == pytest.approx(-2 * math.log(2), rel=1e-9)


def test_semiconjugacy_residual_examples(ricker, linear):
    x = np.round(np.arange(1, 31) * 0.1, 10)
    assert np.max(semiconjugacy_residual(ricker, x, 1e-10)) <= 1e-9
    np.testing.assert_array_equal(semiconjugacy_residual(linear, x), 0.0)
    assert semiconjugacy_residual(ricker, 0.0) == 0.0


def test_table_invariants(ricker_table, geometric_table):
    for ev in (ricker_table, geometric_table):
        assert ev.h_values[0] == 0.0 and ev.h_prime_values[0] == 1.0
        assert np.all(np.abs(np.diff(ev.h_values)) <= np.diff(ev.grid) + 2 * ev.tol)
        assert ev.max_residual <= 10 * ev.tol
        assert all(abs(r - 0.5) <= 0.05 for r in ev.convergence_ratios)
        assert 0 < ev.invertible_upper <= ev.x_max


def test_table_identity_case(linear_table):
    np.testing.assert_array_equal(linear_table.h_values, linear_table.grid)
    x = np.array([0.005, 1.234, 3.999, 7.5])
    np.testing.assert_array_equal(linear_table(x), x)
    np.testing.assert_array_equal(linear_table.H_prime(x), 1.0)
    np.testing.assert_array_equal(linear_table.H_second(x), 0.0)
    assert linear_table.invertible_upper == linear_table.x_max


@pytest.mark.parametrize("family", ["ricker", "geometric", "binary_splitting"])
def test_interpolation_midpoints(family):
    m = make_model(family)
    ev = build_table(m, x_max=4.0, step=0.01, tol=1e-9)
    mid = (ev.grid[:-1] + ev.grid[1:]) / 2
    assert np.max(np.abs(ev(mid) - h_eval(m, mid, 1e-12))) < 1e-6


def test_interpolated_derivatives(ricker_table, ricker):
    x = np.linspace(0.013, 3.9, 37)
    np.testing.assert_allclose(ricker_table.H_prime(x), h_prime(ricker, x), atol=1e-7)
    np.testing.assert_allclose(ricker_table.H_second(x), h_second(ricker, x), atol=1e-5)


def test_evaluator_beyond_table_uses_direct_evaluation(ricker_table, ricker):
    x = np.array([0.5, 4.5, 9.0])
    np.testing.assert_allclose(ricker_table(x), h_eval(ricker, x), atol=1e-12)
    assert ricker_table(9.0) == pytest.approx(h_eval(ricker, 9.0), abs=1e-12)


def test_evaluator_rejects_negative(ricker_table):
    with pytest.raises(DomainError):
        ricker_table(-1.0)


def test_table_monotone_on_certified_prefix(geometric_table):
    x = np.linspace(0, geometric_table.invertible_upper, 5001)
    assert np.all(np.diff(geometric_table(x)) > 0)


def test_h_inverse_examples(ricker_table, linear_table):
    assert h_inverse(ricker_table, 0.0) == 0.0
    y = np.array([0.1, 0.9, 2.5])
    np.testing.assert_allclose(h_inverse(linear_table, y), y, atol=1e-12)


def test_h_inverse_round_trip_and_conjugacy(ricker_table, ricker):
    top = ricker_table(ricker_table.invertible_upper)
    y = np.linspace(0, top, 41)
    x = h_inverse(ricker_table, y)
    assert np.max(np.abs(ricker_table(x) - y)) <= 1e-10
    # f(v) = H(rho H^-1(v)) for v with rho H^-1(v) inside the table
    v = np.linspace(0, 0.9 * top, 31)
    inner = ricker.rho * h_inverse(ricker_table, v)
    assert np.max(np.abs(ricker.f(v) - ricker_table(inner))) <= 1e-8


def test_h_inverse_out_of_range(ricker_table):
    with pytest.raises(DomainError):
        h_inverse(ricker_table, ricker_table(ricker_table.invertible_upper) + 0.01)
    with pytest.raises(DomainError):
        h_inverse(ricker_table, -0.1)


def test_build_table_rejects_bad_grid(ricker):
    with pytest.raises(DomainError):
        build_table(ricker, x_max=0.0)
    with pytest.raises(DomainError):
        build_table(ricker, step=-0.1)


def test_evaluator_is_immutable(ricker_table):
    assert isinstance(ricker_table, ConjugacyEvaluator)
    with pytest.raises(AttributeError):
        ricker_table.tol = 1.0
