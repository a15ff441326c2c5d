"""Sparse multivariate polynomials with exact rational coefficients.

A polynomial is stored as a map from exponent tuples to coefficients plus a
floating point ``scale`` (the rate constant). Keeping the combinatorial part
exact lets integer evaluation reproduce mass-action propensities bit for bit.
"""

from __future__ import annotations

from fractions import Fraction
from math import prod
from typing import Iterable, Mapping

import numpy as np

Exponent = tuple[int, ...]


class Polynomial:
    """``scale * sum(c_a * x**a)`` over multi-indices ``a``."""

    __slots__ = ("nvars", "terms", "scale")

    def __init__(self, nvars: int, terms: Mapping[Exponent, Fraction | int] | None = None,
                 scale: float = 1.0):
        self.nvars = nvars
        clean = {}
        for alpha, c in (terms or {}).items():
            if len(alpha) != nvars:
                raise ValueError(f"exponent {alpha} does not match {nvars} variables")
            if c != 0:
                clean[tuple(int(a) for a in alpha)] = Fraction(c)
        # ascending multi-index order fixes the summation order
        self.terms: dict[Exponent, Fraction] = dict(sorted(clean.items()))
        self.scale = float(scale)

    @classmethod
    def constant(cls, nvars: int, value: Fraction | int = 1, scale: float = 1.0) -> Polynomial:
        return cls(nvars, {(0,) * nvars: value}, scale)

    @classmethod
    def variable(cls, nvars: int, i: int) -> Polynomial:
        alpha = [0] * nvars
        alpha[i] = 1
        return cls(nvars, {tuple(alpha): 1})

    @classmethod
    def falling_factorial(cls, nvars: int, i: int, order: int) -> Polynomial:
        """x_i (x_i - 1) ... (x_i - order + 1) expanded."""
        out = cls.constant(nvars)
        for r in range(order):
            alpha = [0] * nvars
            alpha[i] = 1
            out = out * cls(nvars, {tuple(alpha): 1, (0,) * nvars: -r})
        return out

    def __mul__(self, other: Polynomial) -> Polynomial:
        if not isinstance(other, Polynomial):
            return NotImplemented
        terms: dict[Exponent, Fraction] = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                key = tuple(x + y for x, y in zip(a, b))
                terms[key] = terms.get(key, Fraction(0)) + ca * cb
        return Polynomial(self.nvars, terms, self.scale * other.scale)

    def scaled(self, factor: float) -> Polynomial:
        return Polynomial(self.nvars, self.terms, self.scale * factor)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms or self.scale == 0.0

    def float_terms(self) -> dict[Exponent, float]:
        """Coefficients with the scale folded in, as doubles."""
        return {a: self.scale * float(c) for a, c in self.terms.items()}

    def exact_value(self, x: Iterable[int]) -> Fraction:
        """Combinatorial part evaluated exactly at an integer point (scale excluded)."""
        x = [int(v) for v in x]
        total = Fraction(0)
        for alpha, c in self.terms.items():
            total += c * prod(xi ** ai for xi, ai in zip(x, alpha))
        return total

    def __call__(self, x) -> float:
        x = np.asarray(x)
        if np.issubdtype(x.dtype, np.integer):
            return self.scale * float(self.exact_value(x.tolist()))
        x = x.astype(float)
        total = 0.0
        for alpha, c in self.terms.items():
            total += float(c) * float(np.prod(x ** np.asarray(alpha)))
        return self.scale * total

    def derivative(self, i: int) -> Polynomial:
        terms = {}
        for alpha, c in self.terms.items():
            if alpha[i] == 0:
                continue
            beta = list(alpha)
            beta[i] -= 1
            terms[tuple(beta)] = c * alpha[i]
        return Polynomial(self.nvars, terms, self.scale)

    def substitute_scale(self, factor: float) -> Polynomial:
        """Polynomial in ``z`` equal to this one at ``x = factor * z`` (float coefficients)."""
        terms = {a: float(c) * factor ** sum(a) for a, c in self.terms.items()}
        return FloatPolynomial(self.nvars, {a: self.scale * v for a, v in terms.items()})

    def __repr__(self) -> str:
        body = " + ".join(f"{c}*x^{a}" for a, c in self.terms.items()) or "0"
        return f"Polynomial({self.scale:g} * ({body}))"


class FloatPolynomial(Polynomial):
    """Polynomial whose coefficients are plain doubles (no exact part)."""

    __slots__ = ()

    def __init__(self, nvars: int, terms: Mapping[Exponent, float] | None = None,
                 scale: float = 1.0):
        self.nvars = nvars
        self.terms = {tuple(a): float(c) for a, c in sorted((terms or {}).items()) if c != 0}
        self.scale = float(scale)

    def exact_value(self, x):
        raise TypeError("FloatPolynomial has no exact representation")

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        total = 0.0
        for alpha, c in self.terms.items():
            total += c * float(np.prod(x ** np.asarray(alpha)))
        return self.scale * total


def univariate_coefficients(poly: Polynomial) -> np.ndarray:
    """Ascending coefficient array of a one-variable polynomial (scale folded in)."""
    if poly.nvars != 1:
        raise ValueError("expected a univariate polynomial")
    coef = np.zeros(poly.degree + 1)
    for (a,), c in poly.float_terms().items():
        coef[a] += c
    return coef
