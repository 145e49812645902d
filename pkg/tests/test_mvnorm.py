import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swgsd.mvnorm import mvn_rectangle, mvn_rectangles, std_normal_cdf, \
    std_normal_quantile

from oracles import mvn_rectangle_quad


def test_cdf_against_mpmath():
    mpmath = pytest.importorskip("mpmath")
    for z in (-6.0, -1.3, 0.0, 0.5, 2.8, 7.0):
        exact = float(mpmath.ncdf(z))
        assert std_normal_cdf(z) == pytest.approx(exact, abs=1e-15)


def test_quantile_inverts_cdf():
    for p in (1e-10, 0.025, 0.5, 0.8, 1 - 1e-10):
        assert std_normal_cdf(std_normal_quantile(p)) == pytest.approx(
            p, rel=1e-12)


def test_quantile_rejects_boundary_arguments():
    for p in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            std_normal_quantile(p)


def test_one_dimensional_rectangle_is_exact():
    res = mvn_rectangle([-1.0], [2.0], [0.5], [[4.0]])
    expected = std_normal_cdf((2.0 - 0.5) / 2.0) \
        - std_normal_cdf((-1.0 - 0.5) / 2.0)
    assert res.value == pytest.approx(expected, abs=1e-15)
    assert res.error_estimate == 0.0


def test_full_space_has_probability_one():
    cov = np.array([[1.0, 0.4], [0.4, 1.0]])
    res = mvn_rectangle([-np.inf, -np.inf], [np.inf, np.inf],
                        [0.0, 0.0], cov)
    assert res.value == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("lower,upper,mean,cov", [
    ([-1.0, -1.0], [1.0, 1.5], [0.0, 0.0],
     [[1.0, 0.6], [0.6, 1.0]]),
    ([0.2, -np.inf], [np.inf, 0.8], [0.3, -0.2],
     [[2.0, 0.5], [0.5, 1.0]]),
    ([-0.5, -0.5, -0.5], [1.0, 1.0, 1.0], [0.0, 0.1, 0.2],
     [[1.0, 0.7, 0.5], [0.7, 1.0, 0.7], [0.5, 0.7, 1.0]]),
    ([-np.inf, -2.0, 0.0], [0.0, 2.0, np.inf], [0.0, 0.0, 0.0],
     [[1.0, 0.9, 0.8], [0.9, 1.0, 0.9], [0.8, 0.9, 1.0]]),
])
def test_rectangle_matches_quadrature_oracle(lower, upper, mean, cov):
    res = mvn_rectangle(lower, upper, mean, cov, abs_tol=1e-7)
    oracle = mvn_rectangle_quad(lower, upper, mean, cov)
    assert res.value == pytest.approx(oracle, abs=1e-6)


def test_batched_call_matches_scalar_calls():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    lowers = np.array([[-1.0, -1.0], [0.0, -2.0], [-3.0, 0.5]])
    uppers = np.array([[1.0, 1.0], [2.0, 0.0], [0.0, np.inf]])
    values, errors = mvn_rectangles(lowers, uppers, cov, seed=7)
    for lo, up, v in zip(lowers, uppers, values):
        scalar = mvn_rectangle(lo, up, [0.0, 0.0], cov, seed=7)
        assert scalar.value == pytest.approx(v, abs=1e-15)
    assert np.all(errors >= 0.0)


def test_deterministic_given_seed():
    cov = np.array([[1.0, 0.3], [0.3, 1.0]])
    a = mvn_rectangle([-1.0, -1.0], [1.0, 1.0], [0.0, 0.0], cov, seed=3)
    b = mvn_rectangle([-1.0, -1.0], [1.0, 1.0], [0.0, 0.0], cov, seed=3)
    c = mvn_rectangle([-1.0, -1.0], [1.0, 1.0], [0.0, 0.0], cov, seed=4)
    assert a.value == b.value
    assert a.value != c.value  # different randomization


def test_error_estimate_is_honest():
    cov = np.array([[1.0, 0.8], [0.8, 1.0]])
    loose = mvn_rectangle([-0.3, -0.3], [0.4, 0.4], [0.0, 0.0], cov,
                          abs_tol=1e-3, seed=11)
    oracle = mvn_rectangle_quad([-0.3, -0.3], [0.4, 0.4],
                                [0.0, 0.0], cov)
    assert abs(loose.value - oracle) <= max(loose.error_estimate, 1e-6)


def test_crossed_limits_rejected():
    with pytest.raises(ValueError):
        mvn_rectangle([1.0, 0.0], [0.0, 1.0], [0.0, 0.0], np.eye(2))


def test_non_positive_definite_covariance_rejected():
    with pytest.raises(ValueError):
        mvn_rectangle([-1.0, -1.0], [1.0, 1.0], [0.0, 0.0],
                      [[1.0, 2.0], [2.0, 1.0]])


def test_limit_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        mvn_rectangles([[-1.0, -1.0, -1.0]], [[1.0, 1.0, 1.0]], np.eye(2))


@settings(max_examples=25, deadline=None)
@given(
    rho=st.floats(-0.95, 0.95),
    a1=st.floats(-2.5, 0.5),
    a2=st.floats(-2.5, 0.5),
    w1=st.floats(0.2, 3.0),
    w2=st.floats(0.2, 3.0),
)
def test_random_bivariate_rectangles_match_oracle(rho, a1, a2, w1, w2):
    cov = np.array([[1.0, rho], [rho, 1.0]])
    lower = [a1, a2]
    upper = [a1 + w1, a2 + w2]
    res = mvn_rectangle(lower, upper, [0.0, 0.0], cov, abs_tol=1e-7)
    oracle = mvn_rectangle_quad(lower, upper, [0.0, 0.0], cov)
    assert res.value == pytest.approx(oracle, abs=1e-6)
