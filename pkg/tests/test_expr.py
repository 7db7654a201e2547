import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sepsr.errors import InputError, ParseError
from sepsr.expr import (Binary, Const, Param, Unary, Var, eval_batch, evaluate,
                        max_var_index, node_count, parse_infix, simplify,
                        substitute_params, to_infix)
from sepsr.gp import ParseMatrix, decode


def test_sin_at_zero():
    out = evaluate(Unary("sin", Var(0)), [0.0])
    assert out.value == 0.0 and out.valid


def test_hand_evaluated_three_variable_target():
    # 0.8 + 0.6*(u^2 + cos u) + sin(v+w)*(v-w) at the origin
    e = parse_infix("0.8 + 0.6*(x1^2 + cos(x1)) + sin(x2 + x3)*(x2 - x3)", 3)
    out = evaluate(e, [0.0, 0.0, 0.0])
    assert out.valid
    assert out.value == pytest.approx(1.4, abs=1e-15)


def test_log_of_negative_is_invalid():
    out = evaluate(Unary("ln", Var(0)), [-1.0])
    assert not out.valid


def test_sqrt_negative_and_divide_by_zero_poison():
    assert not evaluate(Unary("sqrt", Var(0)), [-0.5]).valid
    assert not evaluate(Binary("divide", Const(1.0), Var(0)), [0.0]).valid
    # poisoning propagates through enclosing nodes
    e = Binary("plus", Unary("ln", Var(0)), Const(1.0))
    assert not evaluate(e, [-2.0]).valid


def test_dimension_mismatch_is_input_error():
    with pytest.raises(InputError):
        evaluate(Var(2), [1.0, 2.0])


def test_unbound_param_is_input_error():
    with pytest.raises(InputError):
        evaluate(Param(0), [1.0])
    assert evaluate(Param(0), [1.0], params=(3.5, 0.0)).value == 3.5


def test_evaluate_is_pure():
    e = parse_infix("sin(x1)*exp(x2) - x1/x2", 2)
    pts = np.array([[0.3, 1.7], [2.0, -1.0]])
    a1, v1 = eval_batch(e, pts)
    a2, v2 = eval_batch(e, pts)
    assert np.array_equal(a1, a2) and np.array_equal(v1, v2)


# --- simplify ---------------------------------------------------------------


def test_simplify_identity_and_folding():
    assert simplify(Binary("times", Var(0), Const(1.0))) == Var(0)
    assert simplify(Binary("plus", Const(2.0), Const(3.0))) == Const(5.0)
    e = parse_infix("sin(x1) + 0.0*x2", 2)
    assert to_infix(simplify(e)) == "sin(x1)"


def test_simplify_keeps_invalidity_semantics():
    # 0 * ln(x1) must not fold to 0: ln can poison the validity flag
    e = Binary("times", Const(0.0), Unary("ln", Var(0)))
    s = simplify(e)
    assert not evaluate(s, [-1.0]).valid


def test_simplify_double_negation():
    e = Binary("minus", Const(0.0), Binary("minus", Const(0.0), Var(0)))
    assert simplify(e) == Var(0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_simplify_value_equivalent_on_random_genomes(seed):
    rng = np.random.default_rng(seed)
    g = ParseMatrix.random(2, 4, rng)
    e = substitute_params(decode(g), tuple(rng.uniform(-3, 3, 2)))
    s = simplify(e)
    assert node_count(s) <= node_count(e)
    pts = rng.uniform(-5, 5, size=(50, 2))
    v1, ok1 = eval_batch(e, pts)
    v2, ok2 = eval_batch(s, pts)
    both = ok1 & ok2 & np.isfinite(v1) & np.isfinite(v2)
    assert np.allclose(v1[both], v2[both], rtol=1e-12, atol=1e-12)


# --- infix round trips -------------------------------------------------------


def test_parse_published_result_string():
    e = parse_infix("0.1978/sqrt(x1)", 1)
    assert e == Binary("divide", Const(0.1978), Unary("sqrt", Var(0)))


def test_variable_prints_one_based():
    assert to_infix(Var(0)) == "x1"


def test_parse_then_evaluate_sum_under_sine():
    e = parse_infix("sin(x1+x2+x3)", 3)
    out = evaluate(e, [math.pi / 2, 0.0, 0.0])
    assert out.value == pytest.approx(1.0, abs=1e-12)


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as err:
        parse_infix("sin(x1", 1)
    assert err.value.position == 6
    with pytest.raises(ParseError):
        parse_infix("x5 + 1", 2)
    with pytest.raises(ParseError):
        parse_infix("2 ** 3", 1)


def test_negative_literal_and_square_precedence():
    e = parse_infix("-0.5^2", 1)
    # unary minus binds below ^2
    assert evaluate(e, [0.0]).value == -0.25
    assert evaluate(parse_infix("(-0.5)^2", 1), [0.0]).value == 0.25


def test_structural_round_trip_on_printed_forms():
    cases = [
        "x1 - (x2 - x3)",
        "x1/(x2*x3)",
        "(x1 + x2)^2",
        "sin(x1)*sqrt(cos(x1))/sqrt(x2)",
        "0.8 + 0.6*(x1^2 + cos(x1)) - sin(x2 + x3)*(x2 - x3)",
        "2.0*x1 + (-3.5)",
    ]
    for text in cases:
        e = parse_infix(text, 3)
        again = parse_infix(to_infix(e), 3)
        assert again == e, text


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_random_genomes(seed):
    rng = np.random.default_rng(seed)
    g = ParseMatrix.random(3, 4, rng)
    e = substitute_params(decode(g), tuple(rng.uniform(-4, 4, 2)))
    text = to_infix(e)
    back = parse_infix(text, 3)
    assert back == e
    pts = rng.uniform(-3, 3, size=(50, 3))
    v1, ok1 = eval_batch(e, pts)
    v2, ok2 = eval_batch(back, pts)
    assert np.array_equal(ok1, ok2)
    fin = ok1 & np.isfinite(v1)
    assert np.allclose(v1[fin], v2[fin], rtol=1e-12)


def test_round_trip_a_thousand_genomes_evaluates_identically():
    rng = np.random.default_rng(20260810)
    pts = rng.uniform(0.1, 3.0, size=(50, 4))
    for _ in range(1000):
        g = ParseMatrix.random(4, 3, rng)
        e = substitute_params(decode(g), tuple(rng.uniform(-2, 2, 2)))
        back = parse_infix(to_infix(e), 4)
        v1, ok1 = eval_batch(e, pts)
        v2, ok2 = eval_batch(back, pts)
        assert np.array_equal(ok1, ok2)
        fin = ok1 & np.isfinite(v1)
        if fin.any():
            rel = np.abs(v1[fin] - v2[fin]) / np.maximum(np.abs(v1[fin]), 1e-300)
            assert float(rel.max(initial=0.0)) <= 1e-12


def test_max_var_index():
    assert max_var_index(parse_infix("x1 + sin(x3)", 3)) == 2
    assert max_var_index(Const(2.0)) == -1
