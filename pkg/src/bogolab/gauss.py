"""Cached Gauss-Legendre rules used throughout the package."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_rule(n):
    """Nodes and weights on [-1, 1], cached by node count."""
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def scaled_rule(n, a, b):
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = gauss_rule(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w
