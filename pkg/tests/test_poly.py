"""Polynomial layer: parsing, arithmetic, calculus, and ring properties.

Derived expectations are computed by independent oracles inside the tests
(repeated multiplication for expansions, central finite differences for
gradients) rather than by the code paths under test.
"""

import math

import numpy as np
import pytest

from zenocert.poly import (
    ParseError,
    Polynomial,
    PolyVector,
    UndeclaredVariableError,
    parse,
)

V2 = ("x1", "x2")


def cmap(p: Polynomial):
    return p.coefficient_map()


def test_parse_quadratic_terms():
    p = parse("x1^2 + 2*x1*x2 + x2^2", V2)
    assert cmap(p) == {
        (("x1", 2),): 1.0,
        (("x1", 1), ("x2", 1)): 2.0,
        (("x2", 2),): 1.0,
    }


def test_parse_undeclared_variable():
    with pytest.raises(UndeclaredVariableError):
        parse("-g + 0.5*x2^2", V2)


def test_parse_binomial_square_matches_repeated_multiplication():
    # Oracle: expand (x1+x2)^2 by explicit repeated multiplication.
    s = parse("x1 + x2", V2)
    expanded = s * s
    assert cmap(parse("(x1+x2)^2", V2)) == cmap(expanded)
    assert cmap(expanded) == cmap(parse("x1^2 + 2*x1*x2 + x2^2", V2))


def test_parse_errors_carry_position():
    with pytest.raises(ParseError) as err:
        parse("x1 + * x2", V2)
    assert err.value.position == 5
    with pytest.raises(ParseError, match="negative exponent"):
        parse("x1^-2", V2)
    with pytest.raises(ParseError, match="non-integer"):
        parse("x1^2.5", V2)
    with pytest.raises(ParseError):
        parse("(x1 + x2", V2)


def test_parse_unary_minus_and_numbers():
    p = parse("-x1 + -2.5*x2 - -1", V2)
    assert cmap(p) == {(("x1", 1),): -1.0, (("x2", 1),): -2.5, (): 1.0}
    assert parse("1e-3*x1", V2).evaluate((2.0, 0.0)) == pytest.approx(2e-3)


def test_evaluate_simple():
    p = parse("x1^2 + x2^2", V2)
    assert p.evaluate((3.0, 4.0)) == 25.0
    assert Polynomial.zero(V2).evaluate((7.0, -2.0)) == 0.0


def test_evaluate_drag_field_component():
    # -g + c1*x2^2 with g=9.8, c1=0.5 bound, at x2=2: -9.8 + 0.5*4 = -7.8
    f2 = parse("-9.8 + 0.5*x2^2", V2)
    assert f2.evaluate((0.0, 2.0)) == pytest.approx(-7.8, abs=1e-12)


def test_evaluate_dimension_mismatch():
    with pytest.raises(ValueError):
        parse("x1", V2).evaluate((1.0,))


def test_arith_difference_of_squares():
    p = parse("(x1+x2)*(x1-x2)", V2)
    assert cmap(p) == cmap(parse("x1^2 - x2^2", V2))


def test_arith_additive_inverse_is_zero():
    p = parse("3*x1^2 - x2 + 0.25", V2)
    assert (p + (-1.0) * p).is_zero()


def test_arith_cubic_binomial_coefficients():
    p = parse("(x1+x2)^2 * (x1+x2)", V2)
    assert cmap(p) == {
        (("x1", 3),): 1.0,
        (("x1", 2), ("x2", 1)): 3.0,
        (("x1", 1), ("x2", 2)): 3.0,
        (("x2", 3),): 1.0,
    }


def test_variable_union_is_order_stable():
    a = parse("x1 + y", ("x1", "y"))
    b = parse("x1 + z", ("x1", "z"))
    assert (a + b).variables == ("x1", "y", "z")
    assert (b * a).variables == ("x1", "z", "y")


def test_gradient_trivial():
    g = parse("x1^2 + x2^2", V2).gradient()
    assert cmap(g[0]) == {(("x1", 1),): 2.0}
    assert cmap(g[1]) == {(("x2", 1),): 2.0}
    zg = Polynomial.constant(4.2, V2).gradient()
    assert all(p.is_zero() for p in zg)


def test_gradient_matches_central_finite_differences():
    rng = np.random.default_rng(20240811)
    var3 = ("x1", "x2", "x3")
    for _ in range(100):
        coeffs = {}
        for _ in range(6):
            exps = tuple(int(e) for e in rng.integers(0, 3, size=3))
            if sum(exps) > 4:
                continue
            coeffs[exps] = float(rng.uniform(-2, 2))
        p = Polynomial.from_exponent_dict(var3, coeffs)
        grad = p.gradient()
        x = rng.uniform(-1.5, 1.5, size=3)
        h = 1e-5
        for i in range(3):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd = (p.evaluate(xp) - p.evaluate(xm)) / (2 * h)
            exact = grad[i].evaluate(x)
            scale = max(1.0, abs(exact))
            assert abs(fd - exact) / scale < 1e-6


def test_compose_reset_structures():
    # Restitution-style reset: x2^2 composed with (0, -c*x2) -> c^2*x2^2
    c = 0.7
    p = parse("x2^2", V2)
    subst = PolyVector(
        (Polynomial.zero(V2), parse(f"-{c}*x2", V2))
    )
    assert cmap(p.compose(subst)) == {(("x2", 2),): pytest.approx(c * c)}

    # Identity substitution is the identity operation.
    ident = PolyVector((parse("x1", V2), parse("x2", V2)))
    q = parse("x1^3 - 2*x1*x2 + 5", V2)
    assert cmap(q.compose(ident)) == cmap(q)

    # Nonlinear restitution: x2 o (0, -0.8*x2*(1-0.001*x2^2))
    r = parse("x2", V2).compose(
        PolyVector((Polynomial.zero(V2), parse("-0.8*x2*(1-0.001*x2^2)", V2)))
    )
    assert cmap(r) == {
        (("x2", 1),): pytest.approx(-0.8),
        (("x2", 3),): pytest.approx(0.0008),
    }


def test_compose_dimension_mismatch():
    with pytest.raises(ValueError):
        parse("x1 + x2", V2).compose((parse("x1", V2),))


def _random_poly(rng, variables, max_degree=4, nterms=6):
    coeffs = {}
    n = len(variables)
    for _ in range(nterms):
        exps = tuple(int(e) for e in rng.integers(0, max_degree + 1, size=n))
        if sum(exps) > max_degree:
            continue
        coeffs[exps] = float(rng.uniform(-1, 1))
    return Polynomial.from_exponent_dict(variables, coeffs)


def _coeff_close(a: Polynomial, b: Polynomial, tol=1e-12):
    ka, kb = a.coefficient_map(), b.coefficient_map()
    for key in set(ka) | set(kb):
        if abs(ka.get(key, 0.0) - kb.get(key, 0.0)) > tol:
            return False
    return True


def test_ring_axioms_on_random_polynomials():
    rng = np.random.default_rng(7)
    var3 = ("x1", "x2", "x3")
    for _ in range(200):
        a = _random_poly(rng, var3)
        b = _random_poly(rng, var3)
        c = _random_poly(rng, var3)
        assert _coeff_close((a + b) + c, a + (b + c))
        assert _coeff_close(a * (b + c), a * b + a * c)
        assert _coeff_close(a * b, b * a)
        assert _coeff_close((a * b) * c, a * (b * c))


def test_compose_evaluate_consistency():
    rng = np.random.default_rng(99)
    var2 = ("x1", "x2")
    for _ in range(50):
        p = _random_poly(rng, var2, max_degree=3)
        s1 = _random_poly(rng, var2, max_degree=2)
        s2 = _random_poly(rng, var2, max_degree=2)
        composed = p.compose(PolyVector((s1, s2)))
        x = rng.uniform(-1, 1, size=2)
        inner = (s1.evaluate(x), s2.evaluate(x))
        lhs = composed.evaluate(x)
        rhs = p.evaluate(inner)
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


def test_print_parse_round_trip_identical_terms():
    rng = np.random.default_rng(123)
    var3 = ("x1", "x2", "x3")
    for _ in range(50):
        p = _random_poly(rng, var3)
        q = parse(p.to_string(), var3)
        assert q.coefficient_map() == p.coefficient_map()
    assert parse(Polynomial.zero(V2).to_string(), V2).is_zero()


def test_evaluate_many_matches_scalar_path():
    rng = np.random.default_rng(5)
    p = _random_poly(rng, V2)
    pts = rng.uniform(-2, 2, size=(40, 2))
    vec = p.evaluate_many(pts)
    for k in range(40):
        assert vec[k] == pytest.approx(p.evaluate(pts[k]), rel=1e-12, abs=1e-12)


def test_substitute_binds_constants():
    p = parse("c1*x2^2 - g", ("x2", "c1", "g"))
    q = p.substitute({"c1": 0.5, "g": 9.8})
    assert q.variables == ("x2",)
    assert q.evaluate((2.0,)) == pytest.approx(-7.8)


def test_degree_and_canonical_form():
    p = parse("x1^3*x2 + 1", V2)
    assert p.degree == 4
    tiny = p + Polynomial.constant(1e-16, V2)
    assert cmap(tiny) == cmap(p)
    assert Polynomial.zero(V2).degree == 0
