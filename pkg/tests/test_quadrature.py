"""Quadrature oracles: exact monomial integrals on the unit triangle."""

import math

import numpy as np
import pytest

from cavityrb.quadrature import gauss01, triangle_rule


def monomial_integral(i: int, j: int) -> float:
    # int_T x^i y^j over the unit triangle = i! j! / (i+j+2)!
    return math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)


def test_gauss01_midpoint():
    x, w = gauss01(1)
    assert x.shape == (1,) and w.shape == (1,)
    assert abs(x[0] - 0.5) < 1e-15
    assert abs(w[0] - 1.0) < 1e-15


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_gauss01_polynomial_exactness(n):
    x, w = gauss01(n)
    for k in range(2 * n):
        exact = 1.0 / (k + 1)
        assert abs(w @ x ** k - exact) < 1e-14


def test_gauss01_rejects_zero_points():
    with pytest.raises(ValueError):
        gauss01(0)


@pytest.mark.parametrize("degree", range(9))
def test_weights_sum_to_reference_area(degree):
    _, w = triangle_rule(degree)
    assert abs(w.sum() - 0.5) < 1e-14


@pytest.mark.parametrize("degree", range(7))
def test_monomial_exactness(degree):
    pts, w = triangle_rule(degree)
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            got = float(w @ (pts[:, 0] ** i * pts[:, 1] ** j))
            assert abs(got - monomial_integral(i, j)) < 1e-14, (i, j)


def test_random_polynomial_matches_refined_rule():
    rng = np.random.default_rng(11)
    for degree in (2, 3, 4, 5):
        coef = rng.standard_normal((degree + 1, degree + 1))
        pts_a, w_a = triangle_rule(degree)
        pts_b, w_b = triangle_rule(degree + 8)

        def poly(p):
            out = 0.0
            for i in range(degree + 1):
                for j in range(degree + 1 - i):
                    out = out + coef[i, j] * p[:, 0] ** i * p[:, 1] ** j
            return out

        assert abs(w_a @ poly(pts_a) - w_b @ poly(pts_b)) < 1e-14


def test_points_inside_reference_triangle():
    pts, w = triangle_rule(6)
    assert np.all(pts >= 0.0)
    assert np.all(pts.sum(axis=1) <= 1.0 + 1e-15)
    assert np.all(w > 0.0)


def test_negative_degree_rejected():
    with pytest.raises(ValueError):
        triangle_rule(-1)
