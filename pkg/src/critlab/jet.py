"""Truncated Taylor jets of generating functions about s = 1.

A jet of order R stores ``a_0..a_R`` with ``h(1 + x) = sum_j a_j x^j + O(x^(R+1))``,
so ``a_j = h^(j)(1) / j!``.  For a pgf every coefficient is a nonnegative
factorial moment divided by ``j!``, and ``a_0 = 1``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import comb


def _mul(p, q, order):
    return np.convolve(p, q)[: order + 1]


class Jet:
    __slots__ = ("coef",)

    def __init__(self, coef):
        self.coef = np.asarray(coef, dtype=float)

    @property
    def order(self):
        return len(self.coef) - 1

    @classmethod
    def from_pmf(cls, probs, order):
        probs = np.asarray(getattr(probs, "probs", probs), dtype=float)
        k = np.arange(len(probs))
        return cls([float(np.dot(comb(k, j), probs)) for j in range(order + 1)])

    @classmethod
    def identity(cls, order):
        c = np.zeros(order + 1)
        c[0] = 1.0
        if order >= 1:
            c[1] = 1.0
        return cls(c)

    def compose(self, inner):
        """Jet of ``self o inner``; ``inner`` must take the value 1 at s = 1."""
        if not math.isclose(inner.coef[0], 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("inner jet must satisfy h(1) = 1")
        order = min(self.order, inner.order)
        y = inner.coef[: order + 1].copy()
        y[0] = 0.0
        acc = np.array([self.coef[order]])
        for i in range(order - 1, -1, -1):
            acc = _mul(acc, y, order)
            acc = np.pad(acc, (0, order + 1 - len(acc)))
            acc[0] += self.coef[i]
        return Jet(acc)

    def factorial_moments(self):
        """``h^(j)(1)`` for j = 1..R."""
        return np.array([math.factorial(j) * c for j, c in enumerate(self.coef)][1:])

    def __repr__(self):
        return f"Jet({self.coef.tolist()})"


def compose_scaled(b, ytilde):
    """Coefficients of ``sum_i b_i ytilde(u)^i`` truncated to ``len(b) - 1``.

    ``ytilde`` has no constant term, so the constant coefficient of the
    result is ``b_0``.
    """
    order = len(b) - 1
    acc = np.zeros(order + 1)
    acc[0] = b[order]
    for i in range(order - 1, -1, -1):
        acc = np.convolve(acc, ytilde)[: order + 1]
        acc[0] += b[i]
    return acc
