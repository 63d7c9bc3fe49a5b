import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vscout.exceptions import DegenerateInputError, IllConditionedError
from vscout.numerics import (
    check_data_matrix,
    covariance_matrix,
    empirical_quantile,
    make_rng,
    sample,
    solve_spd,
)


def brute_covariance(Z):
    n, d = Z.shape
    mean = [sum(Z[i, j] for i in range(n)) / n for j in range(d)]
    out = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            out[a, b] = sum((Z[i, a] - mean[a]) * (Z[i, b] - mean[b]) for i in range(n)) / (n - 1)
    return out


def test_covariance_two_rows():
    assert covariance_matrix([[0.0], [2.0]]).tolist() == [[2.0]]


def test_covariance_identical_rows_is_zero():
    Z = np.tile([1.5, -2.0, 3.0], (6, 1))
    np.testing.assert_array_equal(covariance_matrix(Z), np.zeros((3, 3)))


def test_covariance_matches_double_loop(rng):
    Z = rng.normal(size=(5, 3))
    np.testing.assert_allclose(covariance_matrix(Z), brute_covariance(Z), atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 20), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_covariance_property_up_to_20x8(n, d, seed):
    Z = np.random.default_rng(seed).normal(size=(n, d)) * 3
    cov = covariance_matrix(Z)
    np.testing.assert_allclose(cov, brute_covariance(Z), atol=1e-10)
    assert np.max(np.abs(cov - cov.T)) <= 1e-12


def test_covariance_needs_two_rows():
    with pytest.raises(DegenerateInputError):
        covariance_matrix([[1.0, 2.0]])


def test_solve_identity_and_diagonal():
    v = np.array([1.0, -2.0, 3.5])
    np.testing.assert_allclose(solve_spd(np.eye(3), v), v)
    np.testing.assert_allclose(solve_spd([[4.0, 0.0], [0.0, 9.0]], [8.0, 27.0]), [2.0, 3.0])


def test_solve_random_spd_recovers_x(rng):
    M = rng.normal(size=(6, 6))
    A = M.T @ M + np.eye(6)
    x = rng.normal(size=6)
    np.testing.assert_allclose(solve_spd(A, A @ x), x, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_solve_residual_bound(d, seed):
    r = np.random.default_rng(seed)
    M = r.normal(size=(d, d))
    A = M.T @ M + np.eye(d)
    b = r.normal(size=d) * 10
    x = solve_spd(A, b)
    assert np.max(np.abs(A @ x - b)) <= 1e-8 * (1 + np.max(np.abs(b)))


def test_solve_reports_pivot():
    A = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(IllConditionedError) as info:
        solve_spd(A, np.ones(3))
    assert info.value.pivot == 2


def test_solve_rejects_non_finite():
    with pytest.raises(IllConditionedError):
        solve_spd([[np.nan, 0.0], [0.0, 1.0]], [1.0, 1.0])


@pytest.mark.parametrize(
    "values, level, expected",
    [([1, 2, 3, 4, 5], 0.5, 3.0), ([1, 2, 3, 4], 1.0, 4.0), (list(range(100)), 0.95, 94.05)],
)
def test_quantile_examples(values, level, expected):
    assert empirical_quantile(values, level) == pytest.approx(expected, abs=1e-12)


def test_quantile_empty():
    with pytest.raises(DegenerateInputError):
        empirical_quantile([], 0.5)


@given(
    arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e6, 1e6)),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_quantile_monotone_and_bounded(values, a, b):
    lo, hi = sorted((a, b))
    qa, qb = empirical_quantile(values, lo), empirical_quantile(values, hi)
    assert qa <= qb + 1e-9
    assert values.min() - 1e-9 <= qa <= values.max() + 1e-9


def test_normal_moments():
    x = sample("standard_normal", make_rng(1), 100_000)
    assert abs(x.mean()) <= 0.02
    assert 0.95 <= x.var() <= 1.05


def test_lognormal_positive():
    assert (sample("lognormal", make_rng(2), 10_000) > 0).all()


def test_student_t_variance():
    x = sample("student_t", make_rng(3), 100_000, df=5)
    assert 1.4 <= x.var() <= 2.0


def test_student_t_bad_df():
    with pytest.raises(ValueError):
        sample("student_t", make_rng(3), 10, df=0.5)


def test_uniform_range():
    x = sample("uniform01", make_rng(4), 1000)
    assert ((x >= 0) & (x < 1)).all()


def test_fixed_seed_bit_identical():
    a = sample("standard_normal", make_rng(99), 1000)
    b = sample("standard_normal", make_rng(99), 1000)
    assert a.tobytes() == b.tobytes()
    assert make_rng(99, 1).random() != make_rng(99, 2).random()


def test_check_data_matrix_rejects_nan():
    with pytest.raises(DegenerateInputError, match="row 1, column 0"):
        check_data_matrix([[1.0], [np.nan]])
