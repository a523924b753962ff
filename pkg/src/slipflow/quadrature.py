"""Quadrature rules on the reference triangle and the unit interval.

Triangle rules are built from tensor Gauss-Legendre points collapsed onto
the triangle (Duffy transform), which is exact for polynomials up to the
requested degree without transcribed coefficient tables.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def interval_rule(n):
    """Gauss-Legendre rule with n points on [0, 1]; returns (points, weights)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Quadrature on the reference triangle {0 <= xi, eta; xi + eta <= 1}.

    Exact for bivariate polynomials of total degree <= degree.
    Returns (points[n, 2], weights[n]) with weights summing to 1/2.
    """
    n = (degree + 2 + 1) // 2  # Duffy map raises the xi-degree by one
    s, ws = interval_rule(n)
    xi = np.repeat(s, n)
    eta = np.tile(s, n) * (1.0 - xi)
    w = np.repeat(ws * (1.0 - s), n) * np.tile(ws, n)
    pts = np.column_stack([xi, eta])
    return pts, w
