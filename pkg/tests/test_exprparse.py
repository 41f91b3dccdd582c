import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spacetime_tbm import exprparse as ep
from spacetime_tbm.errors import DomainError, ExprSyntaxError, UnknownSymbol


def test_literal():
    assert ep.parse("1") == ep.Const(1.0)


def test_forced_precedence():
    assert ep.parse("-(x1^2)") == ep.Unary("neg", ep.Binary("^", ep.Coord(1), ep.Const(2.0)))


def test_power_binds_tighter_than_negation():
    assert ep.parse("-x1^2") == ep.parse("-(x1^2)")
    assert ep.evaluate(ep.parse("-2^2"), [0.0]) == -4.0


def test_power_is_right_associative():
    assert ep.evaluate(ep.parse("2^3^2"), [0.0]) == 512.0
    assert ep.evaluate(ep.parse("2^-1"), [0.0]) == 0.5


def test_exp_at_origin():
    assert ep.evaluate(ep.parse("exp(-2*x0)"), [0.0]) == 1.0


def test_arithmetic():
    assert ep.evaluate(ep.parse("x0*x0 - x1*x1"), [2.0, 1.0]) == 3.0


def test_sinh_against_series():
    series = math.fsum(1.0 / math.factorial(2 * k + 1) for k in range(20))
    assert ep.evaluate(ep.parse("sinh(x0)"), [1.0, 0.0]) == pytest.approx(series, rel=1e-15)
    assert ep.evaluate(ep.parse("sinh(x0)"), [1.0, 0.0]) == pytest.approx(1.1752011936438014, rel=1e-15)


@pytest.mark.parametrize("src,point", [("x0/x1", [1.0, 0.0]), ("log(x0)", [0.0]),
                                       ("sqrt(x0)", [-1.0]), ("exp(x0)", [1e4])])
def test_domain_errors(src, point):
    with pytest.raises(DomainError):
        ep.evaluate(ep.parse(src), point)


def test_domain_error_on_arrays():
    with pytest.raises(DomainError):
        ep.evaluate(ep.parse("x0/x1"), np.array([[1.0, 1.0], [1.0, 0.0]]))


def test_syntax_error_reports_offset():
    with pytest.raises(ExprSyntaxError) as info:
        ep.parse("1 + * 2")
    assert info.value.offset == 4


@pytest.mark.parametrize("src", ["", "(x0", "x0)", "sin x0", "1 2"])
def test_malformed(src):
    with pytest.raises(ExprSyntaxError):
        ep.parse(src)


def test_unknown_symbols():
    with pytest.raises(UnknownSymbol):
        ep.parse("foo(x0)")
    with pytest.raises(UnknownSymbol):
        ep.parse("y + 1")
    with pytest.raises(UnknownSymbol):
        ep.parse("x2", n=2)


def test_array_matches_scalar():
    e = ep.parse("cosh(x0) * exp(-x1^2) + abs(sin(x0 - x1)) / (2 + x0^2)")
    pts = np.random.default_rng(1).normal(size=(50, 2))
    vec = ep.evaluate(e, pts)
    ref = [ep.evaluate(e, p) for p in pts]
    assert np.allclose(vec, ref, rtol=1e-14, atol=0)
    f = ep.compile_array(e)
    assert np.allclose(f(pts), vec, rtol=1e-14, atol=0)


# ---------------------------------------------------------------------------
# random trees

N_COORDS = 3
_consts = st.floats(-10, 10, allow_nan=False).map(ep.Const)
_leaves = st.one_of(_consts, st.integers(0, N_COORDS - 1).map(ep.Coord))


def _extend(children):
    return st.one_of(
        st.builds(ep.Unary, st.sampled_from(ep.UNARY_OPS), children),
        st.builds(ep.Binary, st.sampled_from(ep.BINARY_OPS), children, children),
    )


trees = st.recursive(_leaves, _extend, max_leaves=40)


def _depth(e):
    if isinstance(e, ep.Unary):
        return 1 + _depth(e.arg)
    if isinstance(e, ep.Binary):
        return 1 + max(_depth(e.left), _depth(e.right))
    return 0


@given(trees)
def test_print_parse_round_trip(e):
    if _depth(e) > 8:
        return
    assert ep.parse(ep.to_string(e)) == e


def _reference(e, x):
    """Plain recursive evaluation with the same operation order; None for domain failures."""
    if isinstance(e, ep.Const):
        return e.value
    if isinstance(e, ep.Coord):
        return x[e.index]
    if isinstance(e, ep.Unary):
        a = _reference(e.arg, x)
        if a is None:
            return None
        if e.op == "neg":
            return -a
        if (e.op == "log" and a <= 0) or (e.op == "sqrt" and a < 0):
            return None
        try:
            return {"sin": math.sin, "cos": math.cos, "sinh": math.sinh, "cosh": math.cosh,
                    "exp": math.exp, "log": math.log, "sqrt": math.sqrt, "abs": abs}[e.op](a)
        except OverflowError:
            return None
    a, b = _reference(e.left, x), _reference(e.right, x)
    if a is None or b is None:
        return None
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        return None if b == 0 else a / b
    try:
        return math.pow(a, b)
    except (ValueError, ZeroDivisionError, OverflowError):
        return None


def _random_tree(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.5:
            return ep.Coord(rng.randrange(N_COORDS))
        return ep.Const(round(rng.uniform(-3, 3), 3))
    if rng.random() < 0.4:
        return ep.Unary(rng.choice(ep.UNARY_OPS), _random_tree(rng, depth - 1))
    return ep.Binary(rng.choice(ep.BINARY_OPS), _random_tree(rng, depth - 1), _random_tree(rng, depth - 1))


def test_eval_matches_reference_evaluator():
    rng = random.Random(7)
    agree = failures = 0
    for _ in range(10_000):
        e = _random_tree(rng, rng.randrange(1, 7))
        x = [rng.uniform(-2, 2) for _ in range(N_COORDS)]
        ref = _reference(e, x)
        if ref is None or not math.isfinite(ref):
            with pytest.raises(DomainError):
                ep.evaluate(e, x)
            failures += 1
        else:
            assert ep.evaluate(e, x) == ref
            agree += 1
    assert agree > 5000
