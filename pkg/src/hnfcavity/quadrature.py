"""Quadrature rules on the reference triangle and on edges."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Points in reference coordinates ``(x, y)`` on the triangle
    ``(0,0), (1,0), (0,1)``; weights sum to its area 1/2."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points[:, 0], self.points[:, 1]
        return np.column_stack([1 - x - y, x, y])


def _strang_fix_7() -> QuadratureRule:
    r = math.sqrt(15.0)
    a, b = (6 - r) / 21, (6 + r) / 21
    wa, wb = (155 - r) / 1200, (155 + r) / 1200
    pts = [(1 / 3, 1 / 3),
           (a, a), (1 - 2 * a, a), (a, 1 - 2 * a),
           (b, b), (1 - 2 * b, b), (b, 1 - 2 * b)]
    w = [9 / 40, wa, wa, wa, wb, wb, wb]
    return QuadratureRule(np.array(pts), 0.5 * np.array(w), 5)


def _collapsed_gauss(degree: int) -> QuadratureRule:
    # Duffy map of the unit square; the Jacobian adds one degree in s
    n = max(1, math.ceil((degree + 2) / 2))
    g, gw = np.polynomial.legendre.leggauss(n)
    g, gw = 0.5 * (g + 1), 0.5 * gw
    s, t = np.meshgrid(g, g, indexing="ij")
    ws, wt = np.meshgrid(gw, gw, indexing="ij")
    x = s.ravel()
    y = (t * (1 - s)).ravel()
    w = (ws * wt * (1 - s)).ravel()
    return QuadratureRule(np.column_stack([x, y]), w, degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int = 5) -> QuadratureRule:
    """Rule exact for polynomials up to ``degree``.

    Degrees up to 5 use the symmetric 7-point rule; higher degrees use a
    collapsed Gauss-Legendre product rule.
    """
    if degree <= 5:
        return _strang_fix_7()
    return _collapsed_gauss(degree)


@lru_cache(maxsize=None)
def edge_rule(npts: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    g, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (g + 1), 0.5 * w
