from math import factorial

import numpy as np
import pytest

from hnfcavity.quadrature import edge_rule, triangle_rule


def monomial_integral(i, j):
    """Exact integral of x^i y^j over the reference triangle."""
    return factorial(i) * factorial(j) / factorial(i + j + 2)


@pytest.mark.parametrize("degree", [1, 2, 4, 5, 7, 9])
def test_triangle_rule_exact_on_monomials(degree):
    rule = triangle_rule(degree)
    assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
    x, y = rule.points.T
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            assert rule.weights @ (x**i * y**j) == pytest.approx(monomial_integral(i, j), rel=1e-12, abs=1e-15)


def test_triangle_rule_not_exact_above_degree():
    rule = triangle_rule(5)
    x, y = rule.points.T
    errors = [abs(rule.weights @ (x**i * y**(6 - i)) - monomial_integral(i, 6 - i)) for i in range(7)]
    assert max(errors) > 1e-8


def test_points_inside_reference_triangle():
    for d in (5, 7, 9):
        b = triangle_rule(d).barycentric
        assert np.all(b >= 0) and np.allclose(b.sum(axis=1), 1)


def test_edge_rule():
    s, w = edge_rule(3)
    assert np.all((s > 0) & (s < 1))
    for k in range(6):
        assert w @ s**k == pytest.approx(1 / (k + 1), rel=1e-13)
