import math
from itertools import combinations

import numpy as np
import pytest

from conftest import mc_oracle, random_correlation
from supnoninf.error_rates import (
    ThetaConfig,
    gamma1,
    gamma1_p,
    gamma1_p_term,
    gamma2,
    gamma2_p,
    mc_rejection_rate,
    worsley_bound,
)
from supnoninf.exceptions import InvalidParameterError
from supnoninf.mvt import CorrelationMatrix, mvt_exch_tail_prob, orthant_prob, t_quantile, t_tail
from supnoninf.solver import SolverConfig, solve_adjusted_alpha


@pytest.mark.parametrize("m,rho", [(2, 0.0), (3, 0.5), (4, 0.3)])
def test_zero_margins_reduce_to_joint_tail(m, rho):
    a, d = 0.02, 40
    t = t_quantile(a, d)
    R = CorrelationMatrix.exchangeable(m, rho)
    joint = mvt_exch_tail_prob(np.full(m, t), rho, d).value
    assert gamma1(a, np.zeros(m), R, d) == pytest.approx(m * joint, rel=1e-12)
    assert gamma2(a, np.zeros(m), d) == pytest.approx(m * a, rel=1e-12)
    assert gamma1(a, np.zeros(m), R, d) <= gamma2(a, np.zeros(m), d)


def test_huge_margins_limits():
    R = CorrelationMatrix.identity(2)
    assert gamma1(0.025, [100, 100], R, 50) == pytest.approx(0.05, abs=1e-4)
    assert gamma2(0.025, [100, 100], 50) == pytest.approx(0.025, abs=1e-9)


def test_huge_margins_general_correlation():
    R = CorrelationMatrix(random_correlation(np.random.default_rng(8), 3))
    g1 = gamma1(0.01, [60, 60, 60], R, 30)
    assert g1 == pytest.approx(0.03, abs=1e-5)
    assert g1 >= gamma2(0.01, [60, 60, 60], 30)


@pytest.mark.parametrize("a_prime,c,d", [(0.0456, 1.0, 50), (0.0380, 0.5, 100)])
def test_reference_cells_hit_alpha(a_prime, c, d):
    R = CorrelationMatrix.identity(2)
    g1, g2 = gamma1(a_prime, [c, c], R, d), gamma2(a_prime, [c, c], d)
    assert max(g1, g2) == pytest.approx(0.05, abs=1e-3)
    assert g1 <= 0.05 + 1e-3


def test_general_path_agrees_with_exchangeable_path():
    R = CorrelationMatrix.exchangeable(3, 0.4)
    fast = gamma1(0.02, [1.2, 1.2, 1.2], R, 30)
    slow = gamma1(0.02, [1.2, 1.2, 1.2 + 1e-12], R, 30)
    assert fast == pytest.approx(slow, abs=3e-6)


def test_unequal_margins_sum_of_terms():
    R = CorrelationMatrix(random_correlation(np.random.default_rng(1), 3))
    c = np.array([0.5, 1.0, 2.0])
    t = t_quantile(0.02, 25)
    terms = []
    for k in range(3):
        low = t - c
        low[k] = t
        terms.append(orthant_prob(low, R, 25))
    assert gamma1(0.02, c, R, 25) == pytest.approx(sum(terms), abs=1e-12)


def test_gamma2_uses_smallest_margin():
    c = [0.3, 2.0]
    t = t_quantile(0.03, 20)
    assert gamma2(0.03, c, 20) == pytest.approx(t_tail(t + 0.3, 20) + 0.03, rel=1e-12)


def test_dimension_and_value_errors():
    with pytest.raises(InvalidParameterError):
        gamma1(0.02, [1.0, 1.0], CorrelationMatrix.identity(3), 20)
    with pytest.raises(InvalidParameterError):
        gamma2(0.02, [], 20)
    with pytest.raises(InvalidParameterError):
        gamma2(0.02, [-1.0, 1.0], 20)
    with pytest.raises(InvalidParameterError):
        gamma1(1.5, [1.0], CorrelationMatrix.identity(1), 20)
    with pytest.raises(InvalidParameterError):
        gamma1_p(0.02, 3, [1.0, 1.0], CorrelationMatrix.identity(2), 20)
    with pytest.raises(InvalidParameterError):
        gamma2_p(0.02, 0, [1.0, 1.0], 20)


@pytest.mark.parametrize("m,rho", [(2, 0.0), (3, 0.5), (4, 0.2)])
def test_p_one_is_bit_identical(m, rho):
    R = CorrelationMatrix.exchangeable(m, rho)
    for a in (0.005, 0.02, 0.04):
        for cv in (0.0, 0.8, 3.0):
            c = np.full(m, cv)
            assert gamma1_p(a, 1, c, R, 45) == gamma1(a, c, R, 45)
            assert gamma2_p(a, 1, c, 45) == gamma2(a, c, 45)


def test_p_one_equals_gamma2_for_unequal_margins(rng):
    for _ in range(20):
        c = rng.uniform(0, 4, size=3)
        a = rng.uniform(0.001, 0.05)
        assert gamma2_p(a, 1, c, 30) == gamma2(a, c, 30)


def test_p_equals_m_is_pure_superiority():
    R = CorrelationMatrix.exchangeable(3, 0.5)
    t = t_quantile(0.02, 50)
    expect = mvt_exch_tail_prob(np.full(3, t), 0.5, 50).value
    assert gamma1_p(0.02, 3, [1.0, 2.0, 3.0], R, 50) == pytest.approx(expect, abs=2e-6)


def test_p_subset_sum_reading():
    # the at-least-p rule sums the subset probability over all index sets;
    # with equal margins and exchangeable correlation every set contributes the same
    R = CorrelationMatrix.exchangeable(3, 0.5)
    single = gamma1_p_term(0.02, (0, 1), [1.0] * 3, R, 50)
    assert gamma1_p(0.02, 2, [1.0] * 3, R, 50) == pytest.approx(3 * single, rel=1e-12)
    assert 2 * gamma1_p_term(0.02, (0,), [1.0] * 2, CorrelationMatrix.exchangeable(2, 0.3), 40) == \
        pytest.approx(gamma1(0.02, [1.0] * 2, CorrelationMatrix.exchangeable(2, 0.3), 40), rel=1e-12)


def test_p_subset_term_against_monte_carlo():
    R = CorrelationMatrix.exchangeable(3, 0.5)
    t = t_quantile(0.02, 50)
    term = gamma1_p_term(0.02, (0, 1), [1.0] * 3, R, 50)
    p, se = mc_oracle(np.array([t, t, t - 1.0]), np.full(3, np.inf), R.matrix, 50, 10_000_000, seed=17)
    assert abs(term - p) <= 3 * se


def test_p_sum_bounds_rejection_rate():
    R = CorrelationMatrix(random_correlation(np.random.default_rng(2), 3))
    c = np.array([0.7, 1.1, 1.6])
    g = gamma1_p(0.02, 2, c, R, 40)
    mc = mc_rejection_rate(ThetaConfig.superiority_lfc(c), c, 0.02, R, 40, p=2, reps=400_000, seed=3)
    assert mc.rate <= g + 3 * mc.std_error
    best = max(gamma1_p_term(0.02, s, c, R, 40) for s in combinations(range(3), 2))
    assert g >= best


def test_gamma2_p_examples():
    a, d = 0.02, 50
    t = t_quantile(a, d)
    assert gamma2_p(a, 2, [2.0] * 3, d) == pytest.approx(2 * t_tail(t + 2, d) + a, rel=1e-12)
    for p in (1, 2, 3):
        assert gamma2_p(a, p, np.zeros(3), d) == pytest.approx(3 * a, rel=1e-12)


def test_gamma2_p_takes_smallest_margins():
    a, d = 0.02, 50
    t = t_quantile(a, d)
    c = [3.0, 0.2, 1.0]
    expect = t_tail(t + 0.2, d) + t_tail(t + 1.0, d) + a
    assert gamma2_p(a, 2, c, d) == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("m,rho,c", [(2, 0.0, 0.5), (3, 0.5, 2.0), (3, 0.2, 1.0)])
def test_bounds_increase_in_alpha_prime(m, rho, c):
    R = CorrelationMatrix.exchangeable(m, rho)
    grid = np.linspace(0.05 / m, 0.05, 20)
    g1 = [gamma1(a, np.full(m, c), R, 30) for a in grid]
    g2 = [gamma2(a, np.full(m, c), 30) for a in grid]
    assert np.all(np.diff(g1) > 0)
    assert np.all(np.diff(g2) > 0)


# ---------------------------------------------------------------- Worsley bound

def test_worsley_vanishes_for_very_negative_effects():
    R = CorrelationMatrix.exchangeable(2, 0.3)
    w = worsley_bound(ThetaConfig([-50.0, -50.0]), [1.0, 1.0], 0.03, R, 40)
    assert w.value == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("m,rho,c", [(2, 0.0, 1.0), (2, 0.5, 0.4), (3, 0.5, 1.0)])
def test_worsley_at_superiority_lfc(m, rho, c):
    R = CorrelationMatrix.exchangeable(m, rho)
    cv = np.full(m, c)
    w = worsley_bound(ThetaConfig.superiority_lfc(cv), cv, 0.03, R, 40)
    g1 = gamma1(0.03, cv, R, 40)
    assert w.first_order == pytest.approx(g1, abs=1e-6)
    assert w.raw <= g1 + 1e-6


def test_worsley_exact_for_two_endpoints():
    R = CorrelationMatrix.exchangeable(2, 0.4)
    c = np.array([0.8, 1.5])
    theta = ThetaConfig([0.5, 1.2])
    w = worsley_bound(theta, c, 0.03, R, 30)
    mc = mc_rejection_rate(theta, c, 0.03, R, 30, reps=2_000_000, seed=4)
    assert abs(w.raw - mc.rate) <= 3 * mc.std_error + w.abs_error


def test_worsley_dominates_rejection_rate():
    R = CorrelationMatrix(random_correlation(np.random.default_rng(6), 3))
    c = np.array([1.0, 0.6, 1.4])
    theta = ThetaConfig([0.9, 0.2, 1.1])
    w = worsley_bound(theta, c, 0.03, R, 30)
    mc = mc_rejection_rate(theta, c, 0.03, R, 30, reps=500_000, seed=5)
    assert mc.rate <= w.raw + 3 * mc.std_error + w.abs_error


def test_worsley_monotone_step():
    R = CorrelationMatrix.exchangeable(2, 0.2)
    c = np.array([1.0, 1.0])
    lo = worsley_bound(ThetaConfig([0.3, 0.8]), c, 0.03, R, 50).raw
    hi = worsley_bound(ThetaConfig([0.4, 0.8]), c, 0.03, R, 50).raw
    assert lo <= hi


def test_worsley_hub_checks():
    with pytest.raises(InvalidParameterError):
        worsley_bound(ThetaConfig([0.1, 0.2]), [1.0, 1.0], 0.03, CorrelationMatrix.identity(2), 10, hub=2)
    with pytest.raises(InvalidParameterError):
        worsley_bound(ThetaConfig([0.1]), [1.0, 1.0], 0.03, CorrelationMatrix.identity(2), 10)


def test_noninferiority_lfc_matches_gamma2_terms():
    R = CorrelationMatrix.exchangeable(2, 0.3)
    c = np.array([0.6, 0.6])
    t = t_quantile(0.03, 50)
    w = worsley_bound(ThetaConfig.noninferiority_lfc(2, 0), c, 0.03, R, 50)
    # endpoint 0 sits at its non-inferiority boundary, endpoint 1 is certain to pass
    assert w.raw == pytest.approx(t_tail(t, 50), abs=1e-6)
    assert w.raw <= gamma2(0.03, c, 50)


# ---------------------------------------------------------------- Monte Carlo oracle

def test_mc_worker_invariance():
    R = CorrelationMatrix.exchangeable(2, 0.5)
    args = (ThetaConfig([1.0, 1.0]), [1.0, 1.0], 0.03, R, 40)
    a = mc_rejection_rate(*args, reps=150_000, seed=9, workers=1)
    b = mc_rejection_rate(*args, reps=150_000, seed=9, workers=3)
    assert a == b


def test_mc_deterministic_and_limits():
    R = CorrelationMatrix.identity(2)
    a = mc_rejection_rate(ThetaConfig([1.0, 1.0]), [1.0, 1.0], 1e-12, R, 40, reps=10_000)
    assert a.rate == 0.0
    one = mc_rejection_rate(ThetaConfig([1.0, 1.0]), [1.0, 1.0], 0.03, R, 40, reps=1)
    assert one.rate in (0.0, 1.0)
    with pytest.raises(InvalidParameterError):
        mc_rejection_rate(ThetaConfig([1.0, 1.0]), [1.0, 1.0], 0.03, R, 40, reps=0)


@pytest.mark.parametrize("rho,c", [(0.0, 0.2 / math.sqrt(0.02)), (0.5, 0.5 / math.sqrt(0.02))])
def test_type_one_error_at_lfcs_with_solved_level(rho, c):
    R = CorrelationMatrix.exchangeable(2, rho)
    cv = np.full(2, c)
    sol = solve_adjusted_alpha(2, cv, R, 198, SolverConfig(alpha=0.05))
    configs = [ThetaConfig.superiority_lfc(cv), ThetaConfig.noninferiority_lfc(2, 0),
               ThetaConfig.noninferiority_lfc(2, 1)]
    for cfg in configs:
        mc = mc_rejection_rate(cfg, cv, sol.alpha_prime, R, 198, reps=200_000, seed=1)
        assert mc.rate <= 0.05 + 3 * mc.std_error
