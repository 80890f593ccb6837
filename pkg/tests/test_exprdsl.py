import numpy as np
import pytest
from numpy.testing import assert_allclose

from quasipot.errors import DomainError, ParseError, UnknownIdentifier
from quasipot.exprdsl import evaluate, parse, to_source


def test_parameters_bound_at_parse_time():
    e = parse("-gamma*x2 - x1", 2, {"gamma": 3.0})
    r = evaluate(e, [1.0, 2.0])
    assert r.value == pytest.approx(-7.0)
    assert_allclose(r.gradient, [-1.0, -3.0])
    assert_allclose(r.hessian, np.zeros((2, 2)))


def test_cubic():
    r = evaluate(parse("x1^3 - x1", 1), [2.0])
    assert r.value == pytest.approx(6.0)
    assert_allclose(r.gradient, [11.0])
    assert_allclose(r.hessian, [[12.0]])


def test_trailing_operator_offset():
    with pytest.raises(ParseError) as info:
        parse("x1 +", 1)
    assert info.value.offset == 4
    assert info.value.message.endswith("at offset 4")


@pytest.mark.parametrize("source", ["", "   "])
def test_empty_input(source):
    with pytest.raises(ParseError) as info:
        parse(source, 1)
    assert info.value.offset == 0


def test_unbalanced_parenthesis():
    with pytest.raises(ParseError) as info:
        parse("(x1 + 1", 1)
    assert info.value.offset == 7


def test_unknown_identifier_reports_name_and_offset():
    with pytest.raises(UnknownIdentifier) as info:
        parse("x1 + beta", 1)
    assert info.value.details["name"] == "beta"
    assert info.value.details["offset"] == 5


def test_variable_index_beyond_dimension():
    with pytest.raises(UnknownIdentifier):
        parse("x3", 2)


def test_offsets_count_bytes():
    with pytest.raises(ParseError) as info:
        parse("x1 + é", 1)
    assert info.value.offset == 5


def test_bilinear():
    r = evaluate(parse("x1*x2", 2), [2.0, 3.0])
    assert r.value == pytest.approx(6.0)
    assert_allclose(r.gradient, [3.0, 2.0])
    assert_allclose(r.hessian, [[0.0, 1.0], [1.0, 0.0]])


def test_exponential():
    r = evaluate(parse("exp(x1)", 1), [0.0])
    assert r.value == pytest.approx(1.0)
    assert_allclose(r.gradient, [1.0])
    assert_allclose(r.hessian, [[1.0]])


def test_double_well_at_minimum():
    r = evaluate(parse("x1^4/4 - x1^2/2", 1), [1.0])
    assert r.value == pytest.approx(-0.25)
    assert_allclose(r.gradient, [0.0], atol=1e-15)
    assert_allclose(r.hessian, [[2.0]])


def test_power_is_right_associative_and_binds_tighter_than_minus():
    assert evaluate(parse("2^3^2", 1), [0.0]).value == pytest.approx(512.0)
    assert evaluate(parse("-x1^2", 1), [3.0]).value == pytest.approx(-9.0)
    assert evaluate(parse("2^-1", 1), [0.0]).value == pytest.approx(0.5)


def test_hessian_symmetric():
    r = evaluate(parse("sin(x1*x2) + x3^2*x1", 3), [0.3, -0.7, 1.1])
    assert_allclose(r.hessian, r.hessian.T, rtol=0, atol=0)


def test_log_of_nonpositive_is_domain_error():
    e = parse("log(x1)", 1)
    with pytest.raises(DomainError):
        evaluate(e, [-1.0])


def test_abs_kink():
    e = parse("abs(x1)", 1)
    assert evaluate(e, [-2.0]).gradient[0] == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        evaluate(e, [0.0])


def test_fractional_power_of_negative_base():
    e = parse("x1^0.5", 1)
    assert evaluate(e, [4.0]).value == pytest.approx(2.0)
    with pytest.raises(DomainError):
        evaluate(e, [-4.0])


def test_to_source_reparses_to_same_value():
    e = parse("-k*x1^2/2 + sqrt(x2) - 3", 2, {"k": -1.5})
    again = parse(to_source(e), 2)
    point = [0.4, 2.0]
    assert evaluate(again, point).value == pytest.approx(evaluate(e, point).value)
    assert "(-1.5)" in to_source(e)


def test_folded_integer_exponent_allows_negative_base():
    e = parse("x1^(1+1) + x1^(6/2) + x1^(-(4-2))", 1)
    r = evaluate(e, [-2.0])
    assert r.value == pytest.approx(4.0 - 8.0 + 0.25)
    assert r.gradient[0] == pytest.approx(-4.0 + 12.0 + 0.25)
    assert e.guards == ()


def random_source(rng, depth):
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return f"x{rng.integers(1, 4)}"
        return f"{rng.uniform(0.2, 1.5):.3g}"
    kind = rng.integers(0, 6)
    a = random_source(rng, depth - 1)
    if kind == 0:
        return f"{rng.choice(['sin', 'cos', 'tanh'])}({a})"
    if kind == 1:
        return f"exp(sin({a}))"
    if kind == 2:
        return f"({a})^2"
    b = random_source(rng, depth - 1)
    return f"({a}) {'+-*'[kind - 3]} ({b})"


def test_derivatives_match_central_differences(rng):
    h = 1e-5
    for _ in range(40):
        e = parse(random_source(rng, 3), 3)
        x = rng.uniform(-0.8, 0.8, 3)
        r = evaluate(e, x)
        steps = h * np.eye(3)
        fd_grad = [(evaluate(e, x + d).value - evaluate(e, x - d).value) / (2 * h) for d in steps]
        fd_hess = np.array(
            [(evaluate(e, x + d).gradient - evaluate(e, x - d).gradient) / (2 * h) for d in steps]
        )
        scale = 1.0 + np.max(np.abs(r.gradient)) + np.max(np.abs(r.hessian))
        assert_allclose(r.gradient, fd_grad, rtol=1e-5, atol=1e-6 * scale)
        assert_allclose(r.hessian, fd_hess, rtol=1e-5, atol=1e-6 * scale)


def test_random_expressions_survive_printing(rng):
    for _ in range(40):
        e = parse(random_source(rng, 4), 3)
        again = parse(to_source(e), 3)
        x = rng.uniform(-1.0, 1.0, 3)
        assert evaluate(again, x).value == pytest.approx(evaluate(e, x).value, rel=1e-12, abs=1e-12)
