from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import quad

from rnfilter.gaussian import (GaussianState, PolynomialExpectation, central_moment,
                               expect_diffusion, expect_jacobian, expect_polynomial,
                               expect_propensity, expect_state_propensity, gaussian_moment,
                               moment_vector)
from rnfilter.network import Reaction, ReactionNetwork, propensity_jacobian, propensity_real
from rnfilter.polynomial import Polynomial

from conftest import random_spd


def hermite_expectation(mean, cov, f, nodes=12):
    """Tensor Gauss-Hermite E[f(x)], x = mean + L z; exact for degree < 2 * nodes."""
    z, w = hermegauss(nodes)
    w = w / np.sqrt(2 * np.pi)
    L = np.linalg.cholesky(cov)
    n = len(mean)
    total = 0.0
    for idx in product(range(nodes), repeat=n):
        x = mean + L @ z[list(idx)]
        total += np.prod(w[list(idx)]) * f(x)
    return total


def quad_expectation(mu, var, f):
    s = np.sqrt(var)
    dens = lambda x: np.exp(-0.5 * ((x - mu) / s) ** 2) / (s * np.sqrt(2 * np.pi))  # noqa: E731
    val, _ = quad(lambda x: f(x) * dens(x), mu - 12 * s, mu + 12 * s, epsabs=1e-13, epsrel=1e-12)
    return val


def test_first_moment_is_mean(rng):
    state = GaussianState(rng.normal(size=3), random_spd(rng, 3))
    for i in range(3):
        e = [0, 0, 0]
        e[i] = 1
        assert gaussian_moment(state, e) == state.mean[i]


def test_standard_normal_fourth_moment():
    value = gaussian_moment(GaussianState([0.0], [[1.0]]), [4])
    oracle = quad_expectation(0.0, 1.0, lambda x: x ** 4)
    assert value == 3.0
    assert abs(value - oracle) < 1e-10


def test_correlation():
    rho = 0.37
    state = GaussianState([0.0, 0.0], [[1.0, rho], [rho, 1.0]])
    assert gaussian_moment(state, [1, 1]) == pytest.approx(rho, abs=1e-15)


def test_order_limit():
    with pytest.raises(ValueError):
        gaussian_moment(GaussianState([0.0], [[1.0]]), [9])


def test_polynomial_examples():
    state = GaussianState([1.0], [[2.0]])
    assert expect_polynomial(state, Polynomial.constant(1, 5)) == 5.0
    cube = Polynomial.variable(1, 0) * Polynomial.variable(1, 0) * Polynomial.variable(1, 0)
    assert expect_polynomial(state, cube) == pytest.approx(7.0, rel=1e-15)
    assert abs(7.0 - quad_expectation(1.0, 2.0, lambda x: x ** 3)) < 1e-10
    mu, Q = 3.5, 0.8
    ff = Polynomial.falling_factorial(1, 0, 2)
    value = expect_polynomial(GaussianState([mu], [[Q]]), ff)
    assert value == pytest.approx(Q + mu * mu - mu, rel=1e-14)
    assert value == pytest.approx(quad_expectation(mu, Q, lambda x: x * (x - 1)), rel=1e-10)


def test_bistable_expected_propensity(bistable):
    state = GaussianState([2.0], [[1.0]])
    Eh = expect_propensity(bistable, state)
    assert Eh[2] == pytest.approx(0.18 * 3, rel=1e-14)
    k = bistable.rates
    oracle = quad_expectation(2.0, 1.0, lambda x: k[3] * x * (x - 1) * (x - 2))
    assert Eh[3] == pytest.approx(oracle, rel=1e-8)


def test_bilinear_jacobian_row(limitcycle, rng):
    mean = rng.uniform(50, 300, 3)
    state = GaussianState(mean, random_spd(rng, 3, 100.0))
    EJ = expect_jacobian(limitcycle, state)
    k2 = limitcycle.rates[1]
    np.testing.assert_allclose(EJ[1], [k2 * mean[1], k2 * mean[0], 0.0], rtol=1e-14)


def test_first_order_expectation_is_evaluation(birth_death, rng):
    mean = rng.uniform(0, 50, 1)
    state = GaussianState(mean, [[rng.uniform(1, 20)]])
    np.testing.assert_allclose(expect_propensity(birth_death, state),
                               propensity_real(birth_death, mean), rtol=1e-15)


def test_diffusion_equals_propensity(bistable):
    state = GaussianState([150.0], [[400.0]])
    np.testing.assert_array_equal(expect_diffusion(bistable, state),
                                  expect_propensity(bistable, state))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_random_polynomials_against_hermite(n, rng):
    # 50 random SPD covariances, monomials of total degree up to 6
    alphas = [a for a in product(range(7), repeat=n) if sum(a) <= 6]
    for _ in range(50):
        mean = rng.normal(size=n)
        cov = random_spd(rng, n)
        state = GaussianState(mean, cov)
        picks = [alphas[i] for i in rng.choice(len(alphas), size=4, replace=False)]
        coefs = rng.normal(size=4)
        terms = dict(zip(picks, coefs))
        value = expect_polynomial(state, Polynomial(n, {a: Fraction(c) for a, c in terms.items()}))
        oracle = hermite_expectation(mean, cov,
                                     lambda x: sum(c * np.prod(x ** np.array(a))
                                                   for a, c in terms.items()), nodes=5)
        scale = sum(abs(c) * hermite_expectation(mean, cov, lambda x, a=a: np.prod(np.abs(x) ** a),
                                                 nodes=5) for a, c in terms.items())
        assert abs(value - oracle) <= 1e-8 * max(scale, 1e-300)


@pytest.mark.parametrize("name", ["bistable", "limitcycle"])
def test_network_expectations_against_hermite(name, request, rng):
    net = request.getfixturevalue(name)
    n = net.n_species
    for _ in range(10):
        mean = rng.uniform(50, 400, n)
        cov = random_spd(rng, n, 50.0)
        state = GaussianState(mean, cov)
        Eh = expect_propensity(net, state)
        EJ = expect_jacobian(net, state)
        Exh = expect_state_propensity(net, state)
        np.testing.assert_allclose(
            Eh, hermite_expectation(mean, cov, lambda x: propensity_real(net, x), 4), rtol=1e-8)
        np.testing.assert_allclose(
            EJ, hermite_expectation(mean, cov, lambda x: propensity_jacobian(net, x), 4),
            rtol=1e-8, atol=1e-10 * np.abs(EJ).max())
        np.testing.assert_allclose(
            Exh, hermite_expectation(mean, cov, lambda x: np.outer(x, propensity_real(net, x)), 4),
            rtol=1e-8)


def test_permutation_invariance(rng):
    mean = rng.normal(size=3)
    cov = random_spd(rng, 3)
    perm = [2, 0, 1]
    a = GaussianState(mean, cov)
    b = GaussianState(mean[perm], cov[np.ix_(perm, perm)])
    for alpha in [(1, 2, 3), (0, 4, 2), (2, 2, 2), (1, 0, 5)]:
        permuted = tuple(alpha[p] for p in perm)
        assert gaussian_moment(b, permuted) == pytest.approx(gaussian_moment(a, alpha), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=2).filter(lambda a: sum(a) % 2 == 0))
def test_central_moment_homogeneity(alpha):
    rng = np.random.default_rng(sum(alpha))
    cov = random_spd(rng, 2)
    a = central_moment(cov, tuple(alpha))
    b = central_moment(4 * cov, tuple(alpha))
    assert b == pytest.approx(4 ** (sum(alpha) / 2) * a, rel=1e-12, abs=1e-300)


def test_compiled_table_matches_direct_route(bistable, rng):
    polys = [p for p in bistable.polynomials]
    plan = PolynomialExpectation(polys)
    for _ in range(20):
        state = GaussianState(rng.uniform(0, 500, 1), [[rng.uniform(1, 1e4)]])
        direct = [expect_polynomial(state, p) for p in polys]
        np.testing.assert_allclose(plan.evaluate(state), direct, rtol=1e-12)


def test_moment_vector_shares_cache(rng):
    state = GaussianState(rng.normal(size=2), random_spd(rng, 2))
    alphas = [(2, 0), (0, 2), (1, 1), (4, 2)]
    np.testing.assert_array_equal(moment_vector(state, alphas),
                                  [gaussian_moment(state, a) for a in alphas])


def test_state_validation():
    with pytest.raises(ValueError):
        GaussianState([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        GaussianState([0.0], [[1.0, 0.0], [0.0, 1.0]])


def test_zero_rate_network_has_zero_expectations():
    net = ReactionNetwork(("X",), (Reaction({"X": 1}, {"X": 1}, 0.0, "idle"),))
    assert expect_propensity(net, GaussianState([3.0], [[1.0]]))[0] == 0.0
