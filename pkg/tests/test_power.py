import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import mc_oracle
from supnoninf.exceptions import InvalidParameterError, UnreachableTargetError
from supnoninf.mvt import CorrelationMatrix
from supnoninf.power import PowerSpec, analytic_power, min_sample_size, success_probability
from supnoninf.trial import MarginSpec


def spec(theta, eta, rho, n=100, **kw):
    m = len(theta)
    return PowerSpec(theta1=theta, sd=np.ones(m), margins=MarginSpec(np.zeros(m), np.full(m, eta)),
                     R=CorrelationMatrix.exchangeable(m, rho), n_trt=n, n_ctl=n, **kw)


def test_power_vanishes_for_hopeless_effect():
    assert analytic_power(spec([-np.inf, 0.5], 0.2, 0.3)).power == 0.0
    assert analytic_power(spec([-50.0, 0.5], 0.2, 0.3)).power == pytest.approx(0.0, abs=1e-12)


def test_success_probability_matches_event_simulation():
    R = CorrelationMatrix.exchangeable(2, 0.5)
    shift, c, crit, d = np.array([3.0, 1.5]), np.array([1.4, 1.4]), 2.0, 198
    exact = success_probability(shift, c, crit, R, d)
    lo = crit - shift
    p_ni, se1 = mc_oracle(lo, np.full(2, np.inf), R.matrix, d, 2_000_000, seed=8)
    p_none, se2 = mc_oracle(lo, lo + c, R.matrix, d, 2_000_000, seed=8)
    assert abs(exact - (p_ni - p_none)) <= 3 * (se1 + se2)


def test_power_at_lfc_is_type_one_bound():
    s = spec([0.0, 0.0], 0.3, 0.2)
    res = analytic_power(s)
    assert res.power <= 0.05 + 1e-6
    assert res.power > 0.01


def test_power_monotone_in_effect_and_n():
    prev = 0.0
    for th in np.linspace(0.0, 0.6, 7):
        p = analytic_power(spec([th, 0.1], 0.3, 0.3)).power
        assert p >= prev - 1e-6
        prev = p
    prev = 0.0
    for n in (20, 40, 80, 160):
        p = analytic_power(spec([0.3, 0.1], 0.3, 0.3, n=n)).power
        assert p >= prev - 1e-6
        prev = p


def test_outcome_scale_equals_sd_units():
    a = analytic_power(spec([0.4, 0.1], 0.3, 0.3))
    b = PowerSpec(theta1=[0.8, 0.2], sd=[2.0, 2.0], margins=MarginSpec([0, 0], [0.6, 0.6]),
                  R=CorrelationMatrix.exchangeable(2, 0.3), scale="outcome")
    assert analytic_power(b).power == pytest.approx(a.power, abs=1e-9)


def test_p_two_uses_monte_carlo():
    res = analytic_power(spec([0.5, 0.5, 0.1], 0.3, 0.3, p=2, mc_reps=50_000))
    assert res.method == "monte_carlo"
    assert 0 < res.power < 1 and res.std_error > 0


def test_reference_power_large_effect_cell():
    assert analytic_power(spec([0.66, 0.0], 0.5, 0.0)).power == pytest.approx(0.957, abs=0.010)


def test_sample_size_inverts_large_effect_cell():
    n = min_sample_size(spec([0.66, 0.0], 0.5, 0.0), 0.957).n_trt
    assert 95 <= n <= 105


def test_reference_power_cell_close():
    # the correlated cell lands inside the reference tolerance
    assert analytic_power(spec([0.33, 0.33], 0.2, 0.5)).power == pytest.approx(0.808, abs=0.015)


def test_sample_size_properties():
    s = spec([0.4, 0.1], 0.3, 0.3)
    n80 = min_sample_size(s, 0.80)
    n90 = min_sample_size(s, 0.90)
    assert n80.n_trt < n90.n_trt
    assert n80.power >= 0.80
    below = analytic_power(replace(s, n_trt=n80.n_trt - 1, n_ctl=n80.n_trt - 1)).power
    assert below < 0.80
    assert min_sample_size(s, 1e-6).n_trt == 2


def test_sample_size_allocation_ratio():
    res = min_sample_size(spec([0.4, 0.1], 0.3, 0.3), 0.8, allocation_ratio=2.0)
    assert res.n_ctl == math.ceil(2 * res.n_trt)


def test_sample_size_unreachable():
    with pytest.raises(UnreachableTargetError):
        min_sample_size(spec([-0.5, 0.0], 0.2, 0.3), 0.8, n_max=4096)
    with pytest.raises(InvalidParameterError):
        min_sample_size(spec([0.4, 0.1], 0.3, 0.3), 1.0)


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        spec([0.1, 0.2], 0.2, 0.3, n=1)
    with pytest.raises(InvalidParameterError):
        PowerSpec(theta1=[0.1], sd=[0.0], margins=MarginSpec([0], [0.1]), R=np.eye(1))
    with pytest.raises(InvalidParameterError):
        spec([0.1, 0.2], 0.2, 0.3, scale="percent")
