import math

import mpmath
import numpy as np
import pytest

from reflwalk import bd


def test_iterated_log_against_mpmath():
    mpmath.mp.dps = 30
    assert bd.iterated_log(1e6, 2) == pytest.approx(float(mpmath.log(mpmath.log(10**6))), rel=1e-15)
    assert bd.iterated_log(1e6, 2) == pytest.approx(2.625791914, abs=1e-9)
    x = np.array([20.0, 1e3, 1e6])
    want = [float(mpmath.log(mpmath.log(mpmath.log(v)))) for v in x]
    np.testing.assert_allclose(bd.iterated_log(x, 3), want, rtol=1e-14)


def test_iterated_log_domain():
    with pytest.raises(bd.IteratedLogDomainError):
        bd.iterated_log(2.0, 3)
    assert bd.domain_threshold(3) == pytest.approx(math.e**math.e)


def test_log_products_rows():
    ns = np.array([100, 10_000])
    rows = bd.log_products(ns, 2)
    np.testing.assert_allclose(rows[0], np.log(ns))
    np.testing.assert_allclose(rows[1], np.log(ns) * np.log(np.log(ns)))


def test_partial_products_against_gamma_function():
    # lambda/mu = 1 + 2/n gives prod_{k<=n} k/(k+2) = 2/((n+1)(n+2))
    rates = bd.rates_from_ratio("1 + 2/n")
    ps = bd.series_partial_sums(rates, 10**5)
    n = ps.n.astype(float)
    want = np.array([math.lgamma(m + 1) + math.lgamma(3) - math.lgamma(m + 3) for m in n])
    np.testing.assert_allclose(ps.log_terms, want, rtol=0, atol=1e-9)
    # telescoping: sum_{m<=n} 2/((m+1)(m+2)) = 1 - 2/(n+2)
    np.testing.assert_allclose(ps.sums, 1 - 2 / (n + 2), rtol=1e-10)


def test_log_domain_sums_match_direct_loop():
    rates = bd.rates_from_ratio("1 + 1/n + 1/(n*log(n+1))")
    direct = bd.direct_partial_sums(rates, 2000)
    np.testing.assert_allclose(bd.series_partial_sums(rates, 2000).sums, direct, rtol=1e-12)


def test_bd22_terms_are_one_over_2n_plus_1():
    ps = bd.series_partial_sums(bd.bd22_rates(), 1000)
    np.testing.assert_allclose(np.exp(ps.log_terms), 1 / (2 * ps.n + 1.0), rtol=1e-12)


class TestBertrand:
    @pytest.mark.parametrize(
        "ratio, verdict",
        [
            ("1 + 1/n + 2/(n*log(n))", bd.BDVerdictKind.TRANSIENT),
            ("1 + 1/n", bd.BDVerdictKind.RECURRENT),
            ("1 + 1/n + 1/(n*log(n))", bd.BDVerdictKind.RECURRENT),
            ("1 + 2/n", bd.BDVerdictKind.TRANSIENT),
            ("1", bd.BDVerdictKind.RECURRENT),
            ("1 + 1/n + 1/(n*log(n)) + 2/(n*log(n)*log(log(n)))", bd.BDVerdictKind.TRANSIENT),
        ],
    )
    def test_branches(self, ratio, verdict):
        assert bd.bertrand_test(bd.rates_from_ratio(ratio)).verdict is verdict

    def test_critical_case_settles_at_first_level(self):
        out = bd.bertrand_test(bd.rates_from_ratio("1 + 1/n + 1/(n*log(n))"))
        assert out.K_used == 1

    def test_second_level_is_needed_just_above_the_first(self):
        # c = 1.005 at the first level is neither under 1 nor past the 1.01 margin
        rates = bd.rates_from_ratio("1 + 1/n + 1.005/(n*log(n))")
        first = bd.bertrand_test(rates, K_max=1)
        assert first.verdict is bd.BDVerdictKind.INCONCLUSIVE
        second = bd.bertrand_test(rates, K_max=2)
        assert second.verdict is bd.BDVerdictKind.RECURRENT
        assert second.K_used == 2

    def test_any_positive_second_level_term_wins_on_a_finite_window(self):
        # 2/(n ln n lnln n) is larger than 0.01/(n ln n) while lnln n < 200
        out = bd.bertrand_test(bd.rates_from_ratio("1 + 1/n + 1/(n*log(n)) + 2/(n*log(n)*log(log(n)))"))
        assert out.K_used == 1

    def test_report_fields(self):
        d = bd.bertrand_test(bd.rates_from_ratio("1 + 2/n")).to_dict()
        assert d["method"] == "BertrandTest"
        assert d["window"] == [1000, 1000000]


def test_series_diagnosis():
    assert bd.diagnose_series(bd.rates_from_ratio("1 + 2/n")).tail_exponent == pytest.approx(-2.0, abs=1e-3)
    bd22 = bd.diagnose_series(bd.bd22_rates())
    assert bd22.escalated and bd22.verdict is bd.BDVerdictKind.RECURRENT


def test_bd22_grows_like_half_log():
    slope, loglog = bd.log_growth_slope(bd.bd22_rates(), 10**3, 10**6)
    assert slope == pytest.approx(0.5, abs=1e-3)
    assert loglog == pytest.approx(1.0, abs=0.01)


class TestThresholdForm:
    def test_agrees_with_rates(self):
        for a, want in ((0.125, bd.BDVerdictKind.RECURRENT), (0.5, bd.BDVerdictKind.TRANSIENT)):
            out = bd.proposition1_classify(lambda n, a=a: a + 0 * n)
            assert out.verdict is want
            assert out.extra["cross_check"] == want.value
            assert not out.extra["contradiction"]

    def test_critical_quarter(self):
        out = bd.proposition1_classify(lambda n: 0.25 + 0 * n)
        assert out.verdict is bd.BDVerdictKind.RECURRENT

    def test_first_iterated_log_correction(self):
        out = bd.proposition1_classify(lambda n: 0.25 * (1 + 2 / np.log(n)))
        assert out.verdict is bd.BDVerdictKind.TRANSIENT

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            bd.proposition1_classify(lambda n: -0.1 + 0 * n)


def test_equal_rates_sum_to_the_term_count():
    ps = bd.series_partial_sums(bd.rates_from_ratio("1"), 1000)
    assert ps.sums[-1] == pytest.approx(1000.0, rel=1e-13)


def test_verdicts_ignore_a_common_rate_factor():
    base = bd.rates_from_ratio("1 + 1/n + 2/(n*log(n))")
    scaled = bd.RateSequence(lambda n: base.lam(n) * (3 + np.sin(n)), lambda n: base.mu(n) * (3 + np.sin(n)), "scaled")
    assert bd.bertrand_test(scaled).verdict is bd.bertrand_test(base).verdict


def test_threshold_form_equality_case_and_method_name():
    out = bd.proposition1_classify(lambda n: 0.25 * (1 + 1 / np.log(n)))
    assert out.verdict is bd.BDVerdictKind.RECURRENT
    assert out.K_used == 1
    assert out.method in ("SeriesPartialSums", "BertrandTest")
