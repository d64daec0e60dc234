import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from conftest import mc_oracle, random_correlation
from supnoninf.exceptions import AccuracyNotReachedError, InvalidParameterError
from supnoninf.mvt import (
    CorrelationMatrix,
    Rectangle,
    mvt_exch_rect_prob,
    mvt_exch_tail_prob,
    mvt_rect_prob,
    orthant_prob,
    t_quantile,
    t_tail,
)


def tail_mp(a, d):
    mpmath.mp.dps = 40
    a, d = mpmath.mpf(a), mpmath.mpf(d)
    half = mpmath.betainc(d / 2, mpmath.mpf(1) / 2, 0, d / (d + a * a), regularized=True) / 2
    return float(half if a >= 0 else 1 - half)


@pytest.mark.parametrize("d", [1, 2.5, 10, 67, 651, 1e5])
@pytest.mark.parametrize("a", [-40, -7.5, -1.2, 0.0, 0.3, 1.9758, 4.0, 12.0, 40.0])
def test_t_tail_matches_high_precision(a, d):
    ref = tail_mp(a, d)
    assert t_tail(a, d) == pytest.approx(ref, rel=1e-10, abs=1e-300)


def test_t_tail_reference_anchors():
    assert t_tail(0.0, 7) == 0.5
    assert t_tail(1.9758, 651) == pytest.approx(0.0243, abs=5e-5)
    assert t_tail(2.2917, 67) == pytest.approx(0.01254, abs=5e-6)


@pytest.mark.parametrize("p,d,expected", [(0.0243, 651, 1.9758), (0.01254, 67, 2.2917)])
def test_t_quantile_reference_anchors(p, d, expected):
    assert t_quantile(p, d) == pytest.approx(expected, abs=1e-3)


@pytest.mark.parametrize("d", [1, 3, 30, 1000])
def test_quantile_inverts_tail(d):
    for p in [1e-8, 1e-4, 0.01254, 0.3, 0.5, 0.9]:
        assert t_tail(t_quantile(p, d), d) == pytest.approx(p, rel=1e-9)
    assert t_quantile(0.5, d) == 0.0


def test_univariate_errors():
    with pytest.raises(InvalidParameterError):
        t_tail(1.0, 0)
    with pytest.raises(InvalidParameterError):
        t_quantile(0.0, 10)
    with pytest.raises(InvalidParameterError):
        t_quantile(1.0, 10)


def test_correlation_matrix_validation():
    with pytest.raises(InvalidParameterError):
        CorrelationMatrix(np.array([[1.0, 0.9, 0.9], [0.9, 1.0, -0.9], [0.9, -0.9, 1.0]]))
    with pytest.raises(InvalidParameterError):
        CorrelationMatrix(np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(InvalidParameterError):
        CorrelationMatrix(np.array([[2.0, 0.0], [0.0, 1.0]]))
    assert CorrelationMatrix.exchangeable(3, 0.4).common_rho == pytest.approx(0.4)
    assert CorrelationMatrix(random_correlation(np.random.default_rng(0), 3)).common_rho is None


def test_rectangle_validation():
    with pytest.raises(InvalidParameterError):
        Rectangle(np.array([1.0, 0.0]), np.array([0.0, 1.0]))


def test_independent_factorization():
    a, d = 1.1, 20
    est = mvt_rect_prob(Rectangle.upper_orthant([a, a]), CorrelationMatrix.identity(2), d, target_abs_err=1e-6)
    # a shared chi-square denominator makes the components dependent even when R = I,
    # so the product form only holds in the normal limit
    est_inf = mvt_rect_prob(Rectangle.upper_orthant([a, a]), CorrelationMatrix.identity(2), math.inf)
    assert est_inf.value == pytest.approx(t_tail(a, math.inf) ** 2, abs=max(est_inf.abs_error, 1e-9))
    assert est.value > t_tail(a, d) ** 2


def test_rect_factorization_normal_limit():
    lo, hi = np.array([-0.5, 0.2, 1.0]), np.array([1.5, np.inf, 2.0])
    est = mvt_rect_prob(Rectangle(lo, hi), CorrelationMatrix.identity(3), math.inf, target_abs_err=1e-7)
    expect = np.prod(stats.norm.cdf(hi) - stats.norm.cdf(lo))
    assert abs(est.value - expect) <= max(est.abs_error, 1e-9)


def test_full_space_is_one():
    R = CorrelationMatrix(random_correlation(np.random.default_rng(3), 4))
    est = mvt_rect_prob(Rectangle(np.full(4, -np.inf), np.full(4, np.inf)), R, 9)
    assert est.value == pytest.approx(1.0, abs=1e-12)


def test_dimension_one_is_univariate():
    est = mvt_rect_prob(Rectangle.upper_orthant([1.3]), CorrelationMatrix.identity(1), 12)
    assert est.value == pytest.approx(t_tail(1.3, 12), rel=1e-12)


def test_permutation_symmetry_exchangeable():
    R = CorrelationMatrix.exchangeable(3, 0.35)
    b = np.array([0.2, 1.4, -0.6])
    base = mvt_rect_prob(Rectangle.upper_orthant(b), R, 25, target_abs_err=1e-6)
    for perm in ([2, 0, 1], [1, 2, 0]):
        other = mvt_rect_prob(Rectangle.upper_orthant(b[perm]), R, 25, target_abs_err=1e-6)
        assert abs(other.value - base.value) <= base.abs_error + other.abs_error


def test_raising_lower_bound_decreases():
    R = CorrelationMatrix(random_correlation(np.random.default_rng(5), 3))
    prev = 1.0
    for shift in np.linspace(-1, 2, 7):
        est = mvt_rect_prob(Rectangle.upper_orthant([shift, 0.3, -0.2]), R, 15, target_abs_err=1e-7)
        assert est.value <= prev + 2e-7
        prev = est.value


def test_normal_limit_against_scipy():
    R = random_correlation(np.random.default_rng(11), 3)
    b = np.array([0.4, -0.1, 0.8])
    est = mvt_rect_prob(Rectangle.upper_orthant(b), CorrelationMatrix(R), 1e6, target_abs_err=1e-7)
    ref = stats.multivariate_normal(mean=np.zeros(3), cov=R).cdf(-b)
    assert est.value == pytest.approx(ref, abs=1e-4)


def test_qmc_against_scipy_multivariate_t():
    R = random_correlation(np.random.default_rng(12), 3)
    b = np.array([0.4, -0.1, 0.8])
    est = mvt_rect_prob(Rectangle.upper_orthant(b), CorrelationMatrix(R), 7, target_abs_err=1e-6)
    ref = stats.multivariate_t(loc=np.zeros(3), shape=R, df=7).cdf(-b, maxpts=2_000_000, random_state=1)
    assert est.value == pytest.approx(ref, abs=2e-4)


def test_deterministic_given_seed():
    R = CorrelationMatrix(random_correlation(np.random.default_rng(2), 4))
    rect = Rectangle.upper_orthant([0.1, 0.2, 0.3, 0.4])
    a = mvt_rect_prob(rect, R, 10, seed=7)
    b = mvt_rect_prob(rect, R, 10, seed=7)
    assert a == b


def test_reported_error_within_target():
    R = CorrelationMatrix(random_correlation(np.random.default_rng(4), 4))
    est = mvt_rect_prob(Rectangle.upper_orthant([0.5, 0.0, -0.5, 1.0]), R, 10, target_abs_err=1e-6)
    assert est.abs_error <= 1e-6
    assert est.method == "qmc"


def test_accuracy_budget_exhausted_carries_estimate():
    R = CorrelationMatrix(random_correlation(np.random.default_rng(4), 4))
    with pytest.raises(AccuracyNotReachedError) as info:
        mvt_rect_prob(Rectangle.upper_orthant([0.5, 0.0, -0.5, 1.0]), R, 10,
                      target_abs_err=1e-13, max_evals=2**16)
    assert 0.0 < info.value.estimate.value < 1.0


def test_three_dim_exchangeable_against_monte_carlo():
    R = CorrelationMatrix.exchangeable(3, 0.5)
    est = mvt_rect_prob(Rectangle.upper_orthant([1.0, 1.0, 1.0]), R, 50)
    p, se = mc_oracle(np.ones(3), np.full(3, np.inf), R.matrix, 50, 10_000_000, seed=99)
    assert abs(est.value - p) <= 3 * se


@pytest.mark.parametrize("m", [2, 3, 5])
def test_exchangeable_trivial_limits(m):
    a, d = 0.7, 14
    zero = mvt_exch_tail_prob(np.full(m, a), 0.0, math.inf)
    assert zero.value == pytest.approx(t_tail(a, math.inf) ** m, abs=1e-7)
    one = mvt_exch_tail_prob(np.full(m, a), 1.0, d)
    assert one.value == pytest.approx(t_tail(a, d), abs=1e-12)


def test_exchangeable_zero_rho_finite_df_matches_qmc():
    est = mvt_exch_tail_prob([0.7, 0.7, 0.7], 0.0, 14)
    ref = mvt_rect_prob(Rectangle.upper_orthant([0.7] * 3), CorrelationMatrix.identity(3), 14, target_abs_err=1e-7)
    assert abs(est.value - ref.value) <= est.abs_error + ref.abs_error + 1e-9


def test_exchangeable_matches_general_engine():
    fast = mvt_exch_tail_prob([1.5, 0.5], 0.5, 30)
    slow = mvt_rect_prob(Rectangle.upper_orthant([1.5, 0.5]), CorrelationMatrix.exchangeable(2, 0.5), 30,
                         target_abs_err=1e-7)
    assert fast.method == "quadrature"
    assert fast.abs_error <= 1e-7
    assert abs(fast.value - slow.value) <= fast.abs_error + slow.abs_error


def test_exchangeable_rectangle_matches_general_engine():
    lo, hi = np.array([-0.3, 0.1, 0.6]), np.array([1.2, np.inf, 2.4])
    fast = mvt_exch_rect_prob(lo, hi, 0.3, 8)
    slow = mvt_rect_prob(Rectangle(lo, hi), CorrelationMatrix.exchangeable(3, 0.3), 8, target_abs_err=1e-7)
    assert abs(fast.value - slow.value) <= fast.abs_error + slow.abs_error + 1e-9


def test_negative_rho_routes_to_qmc():
    est = mvt_exch_tail_prob([0.2, 0.2, 0.2], -0.3, 20)
    assert est.method == "qmc"
    p, se = mc_oracle(np.full(3, 0.2), np.full(3, np.inf), CorrelationMatrix.exchangeable(3, -0.3).matrix,
                      20, 2_000_000, seed=5)
    assert abs(est.value - p) <= 3 * se + est.abs_error


def test_orthant_prob_routes():
    R = CorrelationMatrix.exchangeable(3, 0.2)
    v = orthant_prob([0.1, 0.2, 0.3], R, 40)
    assert v == mvt_exch_tail_prob([0.1, 0.2, 0.3], 0.2, 40).value
