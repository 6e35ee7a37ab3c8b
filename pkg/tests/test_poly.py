import math

import numpy as np
import pytest

from engelflow.poly import (
    EvalTable,
    Poly4,
    exponents_up_to,
    format_poly,
    parse_poly,
    poly_allclose,
    random_poly,
)


def test_parse_format_canonical():
    assert format_poly(parse_poly("x1^2/2 + x2*x4")) == "0.5*x1^2 + x2*x4"
    assert format_poly(parse_poly("3*x1 + x2 + 5")) == "3.0*x1 + x2 + 5.0"
    assert format_poly(Poly4.zero()) == "0"


def test_parse_round_trip():
    for text in (
        "x1^2/2 + x1*x2 + x2*x4",
        "1 - x3 + 2*x4^3",
        "-x1 - 0.25*x2^2*x3",
    ):
        f = parse_poly(text)
        assert parse_poly(format_poly(f)) == f


def test_parse_rejects_garbage():
    for bad in ("x5", "x1 +++ y", "1/(x2)", "(x1+x2)^2", ""):
        with pytest.raises(ValueError):
            parse_poly(bad)


def test_arithmetic_expansion():
    x1 = parse_poly("x1")
    x2 = parse_poly("x2")
    sq = (x1 + x2) * (x1 + x2)
    assert sq == parse_poly("x1^2 + 2*x1*x2 + x2^2")
    assert (x1 - x1).is_zero
    assert (x1 * 0.0).is_zero


def test_partial_derivatives():
    f = parse_poly("x1^3*x4 + 2*x2^2 - x3")
    assert f.partial(1) == parse_poly("3*x1^2*x4")
    assert f.partial(2) == parse_poly("4*x2")
    assert f.partial(3) == parse_poly("-1")
    assert f.partial(4) == parse_poly("x1^3")


def test_degree_and_norm():
    f = parse_poly("x1^2*x3 + x4")
    assert f.degree == 3
    assert Poly4.zero().degree == 0
    assert parse_poly("3*x1 + 4*x2").coeff_norm() == 5.0


def test_eval_agrees_with_compiled_and_table():
    rng = np.random.default_rng(3)
    f = random_poly(4, seed=11)
    g = random_poly(2, seed=12)
    cf = f.compiled()
    table = EvalTable([f, g])
    pts = rng.uniform(-2, 2, size=(40, 4))
    vals = table(pts)
    for i, p in enumerate(pts):
        x = tuple(float(v) for v in p)
        direct = f.eval(x)
        assert math.isclose(direct, cf(*x), rel_tol=0, abs_tol=1e-12 * (1 + abs(direct)))
        assert math.isclose(direct, vals[i, 0], rel_tol=0, abs_tol=1e-12 * (1 + abs(direct)))
        assert math.isclose(g.eval(x), vals[i, 1], rel_tol=0, abs_tol=1e-12)


def test_random_poly_reproducible():
    a = random_poly(3, seed=7)
    b = random_poly(3, seed=7)
    c = random_poly(3, seed=8)
    assert a == b
    assert a != c
    assert a.degree <= 3


def test_exponent_slots_degree_two():
    # 4 variables, total degree <= 2: C(6, 2) slots
    assert len(exponents_up_to(2)) == 15


def test_poly_allclose_tolerance():
    f = parse_poly("x1 + x2")
    g = f + Poly4.constant(1e-13)
    assert poly_allclose(f, g, tol=1e-12)
    assert not poly_allclose(f, g + Poly4.constant(1e-6), tol=1e-12)
