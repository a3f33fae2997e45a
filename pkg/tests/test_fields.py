import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempogeo import fields as F
from tempogeo.fields import Add, Call, Mul, Neg, Num, Pow, Sub, Div, Var


def test_parse_call():
    assert F.parse("exp(t + x1)") == Call("exp", (Add(Var("t"), Var("x1")),))


def test_power_binds_tighter_than_unary_minus():
    assert F.parse("-x1^2") == Neg(Pow(Var("x1"), Num(2.0)))


def test_power_is_right_associative():
    assert F.parse("x1^2^3") == Pow(Var("x1"), Pow(Num(2.0), Num(3.0)))


def test_precedence_of_products_over_sums():
    assert F.parse("1 + 2*x1") == Add(Num(1.0), Mul(Num(2.0), Var("x1")))


def test_unknown_identifier():
    with pytest.raises(F.UnknownIdentifierError) as err:
        F.parse("exp(a*x1)")
    assert err.value.name == "a"
    assert err.value.offset == 4


def test_variable_index_beyond_dimension():
    with pytest.raises(F.UnknownIdentifierError):
        F.ScalarField.parse("x3", 2)


def test_arity_mismatch():
    with pytest.raises(F.ArityError):
        F.parse("max(x1)")


def test_syntax_error_reports_offset_and_expected():
    with pytest.raises(F.ParseError) as err:
        F.parse("1 + * 2")
    assert err.value.offset == 4
    assert "(" in err.value.expected


@pytest.mark.parametrize(
    "src,t,x,value",
    [("exp(x1)", 0.0, [0.0], 1.0), ("t*x1 + x2", 2.0, [3.0, 4.0], 10.0), ("max(x1, 2) - min(x1, 2)", 0.0, [5.0], 3.0)],
)
def test_evaluation(src, t, x, value):
    f = F.ScalarField.parse(src, len(x))
    assert f(t, x) == pytest.approx(value, abs=1e-15)


def test_batch_evaluation_shape():
    f = F.ScalarField.parse("x1 + 1", 1)
    assert f(0.0, np.zeros((3, 4, 1))).shape == (3, 4)
    assert np.all(F.ScalarField.parse("2", 1)(0.0, np.zeros((5, 1))) == 2.0)


@pytest.mark.parametrize("src", ["log(x1)", "sqrt(x1)", "1/(x1+1)", "x1^0.5"])
def test_domain_errors_name_the_subexpression(src):
    f = F.ScalarField.parse(src, 1)
    with pytest.raises(F.EvaluationDomainError) as err:
        f(0.0, [-1.0])
    assert "x1" in str(err.value)


def test_domain_error_reports_batch_index():
    f = F.ScalarField.parse("log(x1)", 1)
    with pytest.raises(F.EvaluationDomainError) as err:
        f(0.0, np.array([[1.0], [2.0], [-1.0]]))
    assert list(err.value.index) == [2]


def test_first_derivative_exp():
    d = F.derivative(F.ScalarField.parse("exp(x1)", 1), "x1")
    assert d(0.0, [1.0]) == pytest.approx(math.e, rel=1e-15)


def test_time_derivative_against_richardson_difference():
    f = F.ScalarField.parse("exp(t*x1)", 1)
    exact = F.derivative(f, "t")(1.0, [2.0])

    def central(h):
        return (f(1.0 + h, [2.0]) - f(1.0 - h, [2.0])) / (2 * h)

    h = 1e-3
    richardson = (4 * central(h / 2) - central(h)) / 3
    assert exact == pytest.approx(2 * math.e**2, rel=1e-14)
    assert richardson == pytest.approx(exact, rel=1e-8)


def test_mixed_second_derivative():
    d = F.derivative(F.ScalarField.parse("x1^2*x2", 2), "x1", "x2")
    assert d(0.0, [3.0, 5.0]) == pytest.approx(6.0, abs=1e-13)


def test_derivative_rejects_out_of_range_variable():
    with pytest.raises(ValueError):
        F.derivative(F.ScalarField.parse("x1", 1), "x2")


def test_gradient_and_hessian_of_smooth_field():
    f = F.ScalarField.parse("sin(x1)*exp(x2) + t*x1^3", 2)
    t, x = 0.3, np.array([0.4, -0.2])
    v, g, h = F.hessian(f, t, x)
    s, c, e = math.sin(0.4), math.cos(0.4), math.exp(-0.2)
    assert v == pytest.approx(s * e + 0.3 * 0.064)
    np.testing.assert_allclose(g, [c * e + 0.9 * 0.16, s * e], rtol=1e-14)
    np.testing.assert_allclose(h, [[-s * e + 1.8 * 0.4, c * e], [c * e, s * e]], rtol=1e-14)


def test_constant_helpers():
    assert F.is_constant(F.ScalarField.parse("2*3", 1))
    assert F.constant_value(F.ScalarField.parse("2*3", 1)) == 6.0
    assert not F.is_constant(F.ScalarField.parse("t", 1))


# random ASTs ---------------------------------------------------------------

_leaves = st.one_of(
    st.floats(0, 100, allow_nan=False).map(lambda v: Num(float(v))),
    st.sampled_from(["t", "x1", "x2", "x3"]).map(Var),
)


def _extend(children):
    binary = st.sampled_from([Add, Sub, Mul, Div, Pow])
    return st.one_of(
        st.builds(lambda op, a, b: op(a, b), binary, children, children),
        children.map(Neg),
        st.builds(lambda fn, a: Call(fn, (a,)), st.sampled_from(["exp", "log", "sin", "cos", "sqrt", "tanh", "abs"]), children),
        st.builds(lambda fn, a, b: Call(fn, (a, b)), st.sampled_from(["min", "max"]), children, children),
    )


asts = st.recursive(_leaves, _extend, max_leaves=12)


@given(asts)
@settings(max_examples=300, deadline=None)
def test_unparse_parse_roundtrip(tree):
    text = F.unparse(tree)
    again = F.parse(text)
    assert again == tree
    assert F.unparse(again) == text


# polynomials with hand derivatives -----------------------------------------

_monomial = st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)).filter(lambda e: sum(e) <= 4)
_polys = st.dictionaries(_monomial, st.integers(-9, 9).filter(bool), min_size=1, max_size=6)


def _poly_source(poly):
    terms = []
    for exps, c in poly.items():
        factors = [str(c)] + [f"x{i + 1}^{e}" for i, e in enumerate(exps) if e]
        terms.append("(" + "*".join(factors) + ")")
    return " + ".join(terms)


def _poly_eval(poly, x, di=None, dj=None):
    total = 0.0
    for exps, c in poly.items():
        exps = list(exps)
        coef = float(c)
        for d in (di, dj):
            if d is None:
                continue
            if exps[d] == 0:
                coef = 0.0
                break
            coef *= exps[d]
            exps[d] -= 1
        total += coef * np.prod([x[i] ** exps[i] for i in range(3)])
    return total


@given(_polys, st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.integers(0, 2), st.integers(0, 2))
@settings(max_examples=1000, deadline=None)
def test_polynomial_derivatives_match_hand_derivatives(poly, x, i, j):
    f = F.ScalarField.parse(_poly_source(poly), 3)
    _, grad, hess = F.hessian(f, 0.0, np.array(x))
    scale = 1.0 + sum(abs(c) for c in poly.values()) * 16.0
    assert abs(grad[i] - _poly_eval(poly, x, i)) <= 1e-12 * scale
    assert abs(hess[i, j] - _poly_eval(poly, x, i, j)) <= 1e-12 * scale


_smooth = ["exp(sin(x1))*cos(t*x1)", "tanh(x1)^3 + log(2 + x1^2)", "sqrt(1 + x1^2)/(2 + cos(x1))"]


@pytest.mark.parametrize("src", _smooth)
@pytest.mark.parametrize("x", [-0.7, 0.3, 1.1])
def test_finite_difference_discrepancy_is_second_order(src, x):
    f = F.ScalarField.parse(src, 1)
    exact = F.derivative(f, "x1")(0.5, [x])

    def err(h):
        return abs((f(0.5, [x + h]) - f(0.5, [x - h])) / (2 * h) - exact)

    ratio = err(1e-3) / err(5e-4)
    assert 2.5 <= ratio <= 6.0
