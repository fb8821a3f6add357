import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reflwalk._expr import Expression, ExpressionError
from reflwalk._index import n_states, rank_size, wedge_index, wedge_states
from reflwalk.alpha import (
    AlphaConstraintError,
    DiagonalConvergenceError,
    diagonal_limits,
    field_from_spec,
    make_constant_field,
    make_expression_field,
    make_function_field,
    make_table_field,
    parse_field,
    theta,
    validate_field,
)


def test_wedge_states_are_enumerated_in_index_order():
    states = wedge_states(30)
    assert len(states) == n_states(30)
    for k, (i, j) in enumerate(states):
        assert wedge_index(int(i), int(j)) == k
    assert all(rank_size(n) == n // 2 + 1 for n in range(30))


@given(st.integers(0, 500), st.integers(0, 500))
def test_wedge_index_is_injective_on_sorted_pairs(a, b):
    i, j = min(a, b), max(a, b)
    states = wedge_states(i + j)
    assert tuple(states[wedge_index(i, j)]) == (i, j)


class TestExpression:
    def test_vectorised_value(self):
        out = Expression("1 + 1/n + 2/(n*log(n))", ["n"])(n=np.array([10.0, 100.0]))
        want = 1 + 1 / np.array([10.0, 100.0]) + 2 / (np.array([10.0, 100.0]) * np.log([10.0, 100.0]))
        np.testing.assert_allclose(out, want, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("src", ["__import__('os')", "n.real", "[n]", "lambda: 1", "open('x')", "n if n else 1"])
    def test_rejects_anything_outside_arithmetic(self, src):
        with pytest.raises(ExpressionError):
            Expression(src, ["n"])

    def test_unknown_variable(self):
        with pytest.raises(ExpressionError, match="unknown name"):
            Expression("q + 1", ["n"])


class TestFieldConventions:
    def test_axis_and_diagonal_are_zero(self):
        f = make_constant_field(0.2)
        assert f.evaluate(0, 7) == 0.0
        assert f.evaluate(4, 4) == 0.0
        assert f.evaluate(3, 8) == 0.2

    def test_bound_is_enforced_at_small_rank(self):
        # |alpha| must stay below (i+j)/4, which is 0.75 at (1, 2)
        f = make_constant_field(0.8)
        with pytest.raises(AlphaConstraintError) as err:
            f.evaluate(1, 2)
        assert err.value.pair == (1, 2)
        assert f.evaluate(1, 3) == 0.8

    def test_constant_beyond_C_is_rejected(self):
        with pytest.raises(AlphaConstraintError):
            make_constant_field(1.5, bound_C=1.0)

    def test_out_of_wedge_index(self):
        with pytest.raises(ValueError):
            theta().evaluate(3, 2)

    def test_evaluate_many_matches_scalar(self):
        f = make_expression_field("0.1*(1 - 2**(-i)) + 0.01*m/(m+1)")
        st_ = wedge_states(25)
        many = f.evaluate_many(st_[:, 0], st_[:, 1])
        one = np.array([f.evaluate(int(i), int(j)) for i, j in st_])
        np.testing.assert_array_equal(many, one)


class TestParsing:
    def test_theta_and_constant(self):
        assert parse_field("theta").is_theta
        assert parse_field("constant:0").is_theta
        assert parse_field("constant:0.1").evaluate(2, 5) == 0.1

    def test_table_is_periodic_in_the_offset(self):
        f = parse_field("table:0.2,-0.2")
        assert [f.evaluate(5, 5 + m) for m in (1, 2, 3, 4)] == [0.2, -0.2, 0.2, -0.2]

    def test_spec_round_trip(self):
        f = make_table_field({1: 0.1, 3: 0.05}, fill="last", approach=0.5)
        g = field_from_spec(f.spec)
        st_ = wedge_states(20)
        np.testing.assert_array_equal(f.evaluate_many(st_[:, 0], st_[:, 1]), g.evaluate_many(st_[:, 0], st_[:, 1]))

    def test_garbage(self):
        with pytest.raises(ValueError):
            parse_field("spline:1,2")


class TestDiagonalLimits:
    def test_exact_limits_of_a_table(self):
        f = make_table_field({1: 0.1, 2: 0.05}, fill="zero", approach=0.5)
        lim = diagonal_limits(f)
        np.testing.assert_array_equal(lim.star_array(4), [0.0, 0.1, 0.05, 0.0, 0.0])

    def test_extrapolated_limits_of_an_expression(self):
        # alpha_(i, i+m) = 0.2 * (1 - 0.5**i) * m/(m+1) has limit 0.2 m/(m+1)
        f = make_expression_field("0.2*(1 - 0.5**i)*m/(m+1)", gamma=0.5)
        lim = diagonal_limits(f)
        m = np.arange(1, 12)
        np.testing.assert_allclose(lim.star_array(11)[1:], 0.2 * m / (m + 1), rtol=0, atol=1e-12)

    def test_non_contracting_diagonal(self):
        f = make_function_field(lambda i, j: 0.1 * (-1) ** i if 0 < i < j else 0.0)
        with pytest.raises(DiagonalConvergenceError):
            diagonal_limits(f).star(1)


class TestValidate:
    def test_admissible(self):
        assert validate_field(make_constant_field(0.1), 40) == []

    def test_bound_violation_reported_not_raised(self):
        found = validate_field(make_constant_field(0.9), 10)
        assert [v.pair for v in found] == [(1, 2)]
        assert found[0].as_dict()["limit"] == 0.75

    def test_contraction_violation(self):
        f = make_expression_field("0.01*i/(i+1)")
        # differences along the diagonal shrink like 1/i^2, slower than any fixed ratio
        found = validate_field(f, 40, gamma=0.5)
        assert found and all(v.kind == "contraction" for v in found)
        assert validate_field(make_table_field({1: 0.1}, approach=0.5), 40) == []


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.99, 0.99), st.integers(1, 200), st.integers(1, 200))
def test_constant_field_value_or_refusal(a, i, m):
    f = make_constant_field(a)
    j = i + m
    if abs(a) < (i + j) / 4:
        assert f.evaluate(i, j) == a
    else:
        with pytest.raises(AlphaConstraintError):
            f.evaluate(i, j)
