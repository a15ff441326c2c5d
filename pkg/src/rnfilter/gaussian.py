"""Expectations of polynomials under multivariate Gaussian laws.

Raw moments are obtained by shifting to central moments around the mean and
summing Isserlis pair partitions of the covariance.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from math import comb

import numpy as np

from .network import ReactionNetwork
from .polynomial import Polynomial

MAX_MOMENT_ORDER = 8


@dataclass(frozen=True)
class GaussianState:
    """Mean vector and covariance matrix of a Gaussian approximation."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        tol = 1e-10 * max(np.trace(cov), 1.0)
        if np.linalg.eigvalsh(cov).min() < -tol:
            raise ValueError("covariance must be positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def trusted(cls, mean: np.ndarray, cov: np.ndarray) -> GaussianState:
        """Skip validation; used for intermediate integrator stages."""
        state = object.__new__(cls)
        object.__setattr__(state, "mean", mean)
        object.__setattr__(state, "cov", cov)
        return state

    @property
    def dim(self) -> int:
        return self.mean.size


@lru_cache(maxsize=None)
def _pairings(indices: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """All perfect matchings of a list of coordinate indices, as (I, J) index arrays."""
    def rec(items):
        if not items:
            yield ()
            return
        first, rest = items[0], items[1:]
        for k in range(len(rest)):
            pair = (first, rest[k])
            for tail in rec(rest[:k] + rest[k + 1:]):
                yield (pair,) + tail

    matchings = list(rec(indices))
    npairs = len(indices) // 2
    left = np.array([[p[0] for p in m] for m in matchings], dtype=np.intp).reshape(-1, npairs)
    right = np.array([[p[1] for p in m] for m in matchings], dtype=np.intp).reshape(-1, npairs)
    return left, right


def central_moment(cov: np.ndarray, alpha: tuple[int, ...]) -> float:
    """E[prod (x_i - mu_i)^alpha_i] for a zero-mean Gaussian with covariance ``cov``."""
    order = sum(alpha)
    if order % 2:
        return 0.0
    if order == 0:
        return 1.0
    indices = tuple(i for i, a in enumerate(alpha) for _ in range(a))
    left, right = _pairings(indices)
    return float(np.prod(cov[left, right], axis=1).sum())


@lru_cache(maxsize=None)
def _shift_plan(alpha: tuple[int, ...]) -> tuple[tuple[tuple[int, ...], tuple[int, ...], int], ...]:
    """Terms (beta, alpha - beta, multinomial weight) of the binomial shift, even |beta| only."""
    plan = []
    for beta in product(*(range(a + 1) for a in alpha)):
        if sum(beta) % 2:
            continue
        weight = 1
        for a, b in zip(alpha, beta):
            weight *= comb(a, b)
        plan.append((beta, tuple(a - b for a, b in zip(alpha, beta)), weight))
    return tuple(plan)


def _check_order(alpha):
    if sum(alpha) > MAX_MOMENT_ORDER:
        raise ValueError(f"moment order {sum(alpha)} exceeds {MAX_MOMENT_ORDER}")
    if any(a < 0 for a in alpha):
        raise ValueError("multi-index entries must be nonnegative")


def _raw_moment(mean, cov, alpha, cache):
    total = 0.0
    for beta, rest, weight in _shift_plan(alpha):
        c = cache.get(beta)
        if c is None:
            c = cache[beta] = central_moment(cov, beta)
        if c == 0.0:
            continue
        total += weight * c * float(np.prod(mean ** np.asarray(rest)))
    return total


def gaussian_moment(state: GaussianState, alpha) -> float:
    """E[prod x_i^alpha_i] under ``state``."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != state.dim:
        raise ValueError("multi-index length does not match the state dimension")
    _check_order(alpha)
    return _raw_moment(state.mean, state.cov, alpha, {})


def moment_vector(state: GaussianState, alphas) -> np.ndarray:
    """Raw moments for a list of multi-indices, sharing central-moment work."""
    cache: dict = {}
    out = np.empty(len(alphas))
    for k, alpha in enumerate(alphas):
        _check_order(alpha)
        out[k] = _raw_moment(state.mean, state.cov, tuple(alpha), cache)
    return out


def expect_polynomial(state: GaussianState, poly: Polynomial) -> float:
    terms = poly.float_terms()
    if not terms:
        return 0.0
    alphas = list(terms)
    return float(np.dot(moment_vector(state, alphas), [terms[a] for a in alphas]))


class PolynomialExpectation:
    """Precompiled map from a Gaussian state to expectations of many polynomials.

    Every raw moment is expanded once into terms
    ``coef * prod(mu_i^e_i) * prod(cov[pairs])``; ``evaluate(state)`` then only
    needs a few vectorised products. Entry ``k`` of the result is E[polys[k]].
    """

    def __init__(self, polys, shape=None):
        polys = list(polys)
        self.shape = shape or (len(polys),)
        self.nvars = polys[0].nvars if polys else 0
        n = self.nvars
        out, coef, mean_exp, pairs = [], [], [], []
        for k, p in enumerate(polys):
            for alpha, c in p.float_terms().items():
                _check_order(alpha)
                for beta, rest, weight in _shift_plan(alpha):
                    indices = tuple(i for i, b in enumerate(beta) for _ in range(b))
                    if indices:
                        left, right = _pairings(indices)
                        flat = left * n + right
                    else:
                        flat = np.empty((1, 0), dtype=np.intp)
                    for row in flat:
                        out.append(k)
                        coef.append(c * weight)
                        mean_exp.append(rest)
                        pairs.append(list(row) + [n * n] * (MAX_MOMENT_ORDER // 2 - len(row)))
        self.out = np.array(out, dtype=np.intp)
        self.coef = np.array(coef, dtype=float)
        self.mean_exp = np.array(mean_exp, dtype=np.intp).reshape(len(out), n)
        self.pairs = np.array(pairs, dtype=np.intp).reshape(len(out), MAX_MOMENT_ORDER // 2)
        self.size = int(np.prod(self.shape))
        self._rows = np.arange(n)

    def evaluate(self, state: GaussianState) -> np.ndarray:
        if self.out.size == 0:
            return np.zeros(self.shape)
        mean = np.asarray(state.mean, dtype=float)
        powers = mean[:, None] ** np.arange(MAX_MOMENT_ORDER + 1)
        covpad = np.append(np.asarray(state.cov, dtype=float).ravel(), 1.0)
        terms = (self.coef * powers[self._rows, self.mean_exp].prod(axis=1)
                 * covpad[self.pairs].prod(axis=1))
        return np.bincount(self.out, terms, minlength=self.size).reshape(self.shape)


def _compiled(net: ReactionNetwork):
    cached = net.__dict__.get("_gauss_plans")
    if cached is None:
        n, m = net.n_species, net.n_reactions
        prop = PolynomialExpectation(net.polynomials, (m,))
        jac = PolynomialExpectation([d for row in net.jacobian_polynomials for d in row], (m, n))
        xh = PolynomialExpectation(
            [Polynomial.variable(n, i) * p for i in range(n) for p in net.polynomials], (n, m))
        cached = net.__dict__["_gauss_plans"] = (prop, jac, xh)
    return cached


def expect_propensity(net: ReactionNetwork, state: GaussianState) -> np.ndarray:
    """E[h(x)] (length m)."""
    return _compiled(net)[0].evaluate(state)


def expect_jacobian(net: ReactionNetwork, state: GaussianState) -> np.ndarray:
    """E[J_h(x)] (m x n)."""
    return _compiled(net)[1].evaluate(state)


def expect_diffusion(net: ReactionNetwork, state: GaussianState) -> np.ndarray:
    """Diagonal of E[H(x)] with H(x) = diag(h(x)); equals E[h(x)]."""
    return _compiled(net)[0].evaluate(state)


def expect_state_propensity(net: ReactionNetwork, state: GaussianState) -> np.ndarray:
    """E[x h(x)^T] (n x m)."""
    return _compiled(net)[2].evaluate(state)
