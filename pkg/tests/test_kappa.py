import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reflwalk import kappa
from reflwalk.alpha import diagonal_limits, make_constant_field, make_table_field, parse_field, theta


def test_theta_product_is_one_and_cesaro_is_k_minus_one_over_k():
    lim = diagonal_limits(theta())
    assert kappa.kappa_product(lim, 1000) == 1.0
    assert kappa.kappa_cesaro(lim, 1000) == pytest.approx(0.999, abs=1e-15)


def test_cesaro_against_extended_precision_sum():
    a = 0.1
    k = 1000
    mpmath.mp.dps = 40
    # the factor next to the diagonal sees alpha*_0 = 0, so it is 1 + 6a/k
    factors = [1 + mpmath.mpf(8 * a) / k] * (k - 2) + [1 + mpmath.mpf(6 * a) / k]
    partial, acc = [], mpmath.mpf(1)
    for x in factors:
        acc *= x
        partial.append(acc)
    ref = mpmath.fsum(partial) / k
    got = kappa.kappa_cesaro(diagonal_limits(make_constant_field(a)), k)
    assert abs(got - float(ref)) <= 1e-12 * float(ref)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.4, 0.4), min_size=1, max_size=6), st.integers(3, 1000))
def test_log_domain_product_matches_plain_multiplication(values, k):
    f = make_table_field(list(enumerate(values, start=1)), fill="periodic")
    lim = diagonal_limits(f)
    assert kappa.kappa_product(lim, k) == pytest.approx(kappa.kappa_direct(lim, k), rel=1e-12)


def test_alternating_limits_cancel():
    f = parse_field("table:0.2,-0.2")
    rep = kappa.classify(f)
    assert rep.kappa.value == pytest.approx(1.0, abs=1e-9)
    assert rep.verdict is kappa.Verdict.RECURRENT


def test_richardson_removes_first_order_term():
    # v(k) = 2 + 3/k
    assert kappa.richardson(100, 2.03, 1000, 2.003) == pytest.approx(2.0, abs=1e-12)


class TestDecide:
    def test_clear_cases(self):
        assert kappa.decide(0.5, 1e-3) is kappa.Verdict.RECURRENT
        assert kappa.decide(2.0, 1e-3) is kappa.Verdict.TRANSIENT

    def test_exactly_one_is_recurrent(self):
        assert kappa.decide(1.0, 0.0) is kappa.Verdict.RECURRENT

    def test_near_one_with_a_gap_is_marginal(self):
        assert kappa.decide(1.0 + 1e-4, 1e-3) is kappa.Verdict.MARGINAL
        assert kappa.decide(1.0 - 1e-4, 1e-3) is kappa.Verdict.MARGINAL

    def test_tiny_excess_is_not_enough_for_transience(self):
        assert kappa.decide(1.0 + 5e-7, 0.0) is kappa.Verdict.MARGINAL


class TestClassify:
    def test_modes(self):
        f = make_constant_field(0.1)
        auto = kappa.classify(f)
        assert auto.kappa.mode is kappa.KappaMode.PRODUCT
        closed = kappa.classify(f, mode="closed")
        assert closed.kappa.value == math.exp(0.8)
        ces = kappa.classify(f, mode="cesaro")
        assert ces.kappa.value == pytest.approx((math.exp(0.8) - 1) / 0.8, rel=1e-6)

    def test_closed_only_for_constants(self):
        with pytest.raises(ValueError):
            kappa.classify(parse_field("table:0.1,0.2"), mode="closed")

    def test_both_index_readings(self):
        rep = kappa.classify(make_constant_field(0.05)).to_dict()
        assert rep["psi_index"] == pytest.approx(0.4, rel=1e-6)
        assert rep["psi_literal"] == pytest.approx(math.exp(0.4), rel=1e-6)
        assert "psi_literal" in rep["notes"]

    def test_bad_schedule(self):
        with pytest.raises(ValueError):
            kappa.classify(theta(), [1000, 100])

    def test_lower_than_cesaro_when_field_is_positive(self):
        rep = kappa.classify(make_constant_field(0.2)).diagnostics
        assert np.all(np.array(rep["cesaro"]) < np.array(rep["product"]))
