import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from rnfilter.filters import gpf_drift
from rnfilter.gaussian import GaussianState
from rnfilter.network import Reaction, ReactionNetwork
from rnfilter.quartic import (QuarticError, QuarticState, adaptive_quadrature, density_window,
                              exponent, quartic_base_integrals, quartic_correct, quartic_drift,
                              quartic_drift_theta, quartic_expect_Lc, quartic_fisher,
                              quartic_map, quartic_map_many, quartic_moment_recursion,
                              generator_matrix, scalar_generator, stationary_points)

from conftest import immigration_death

BIMODAL = (0.0, 3.0, 0.0, -1.0)


def oracle_moments(theta, powers=9):
    """Independent oracle: 30-digit mpmath quadrature over the real line."""
    t = [mp.mpf(float(v)) for v in theta]
    crit = np.roots([4 * theta[3], 3 * theta[2], 2 * theta[1], theta[0]])
    breaks = sorted(float(c.real) for c in crit if abs(c.imag) < 1e-9)
    with mp.workdps(30):
        f = lambda x: mp.exp(((t[3] * x + t[2]) * x + t[1]) * x * x + t[0] * x)  # noqa: E731
        nodes = [-mp.inf] + breaks + [mp.inf]
        ints = [mp.quad(lambda x, k=k: x ** k * f(x), nodes) for k in range(powers)]
        return np.array([float(v / ints[0]) for v in ints])


def random_theta(rng):
    return np.array([rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1, 1),
                     rng.uniform(-2, -0.05)])


# ---------------------------------------------------------------------------
# base integrals

def test_near_gaussian_base_moments():
    eta = quartic_base_integrals((0.0, -0.5, 0.0, -1e-9)).eta
    assert abs(eta[1]) < 1e-6
    assert abs(eta[2] - 1.0) < 1e-4


def test_even_density_has_exact_zero_mean():
    for theta in [(0.0, -0.5, 0.0, -0.3), BIMODAL, (0.0, 7.0, 0.0, -0.01)]:
        eta = quartic_base_integrals(theta).eta
        assert eta[1] == 0.0 and eta[3] == 0.0


def test_bimodal_second_moment():
    eta = quartic_base_integrals(BIMODAL).eta
    oracle = oracle_moments(BIMODAL)
    assert abs(eta[2] - oracle[2]) < 1e-8
    np.testing.assert_allclose(stationary_points(BIMODAL), [-np.sqrt(1.5), 0.0, np.sqrt(1.5)],
                               atol=1e-12)


def test_quadrature_against_high_precision(rng):
    for _ in range(20):
        theta = random_theta(rng)
        eta = quartic_base_integrals(theta).eta
        oracle = oracle_moments(theta)
        np.testing.assert_allclose(eta, oracle, rtol=1e-8, atol=1e-10)


def test_narrow_offset_density():
    # variance 1e-4 centred at 40: raw-coordinate cancellation is severe
    mu, var = 40.0, 1e-4
    theta = np.array([mu / var, -0.5 / var, 0.0, -1e-6])
    state = QuarticState.from_theta(theta)
    assert state.variance == pytest.approx(var, rel=1e-2)
    assert state.mean == pytest.approx(mu, rel=1e-4)


def test_log_normaliser(rng):
    theta = random_theta(rng)
    shift, sums = adaptive_quadrature(theta, powers=1)
    x = np.linspace(-30, 30, 2_000_001)
    log_i0 = np.log(trapezoid(np.exp(exponent(theta, x) - shift), x)) + shift
    assert shift + np.log(sums[0]) == pytest.approx(log_i0, rel=1e-9)
    assert QuarticState.from_theta(theta).log_norm == pytest.approx(log_i0, rel=1e-9)


def test_window_contains_the_mass():
    x_star, c, peak, a, b = density_window(np.array(BIMODAL))
    edges = np.array([x_star + a, x_star + b])
    drop = exponent(BIMODAL, edges) - (c[0] + peak)
    np.testing.assert_allclose(drop, -45.0, atol=1e-6)


@pytest.mark.parametrize("theta", [(0.0, 0.0, 0.0, 0.0), (1.0, -1.0, 0.0, 0.1), (0, 0, 0, np.nan)])
def test_invalid_theta(theta):
    with pytest.raises(QuarticError):
        quartic_base_integrals(theta)


# ---------------------------------------------------------------------------
# recursion and Fisher matrix

def test_recursion_gaussian_fourth_moment():
    theta = (0.0, -0.5, 0.0, -1e-6)
    eta = quartic_moment_recursion(theta, quartic_base_integrals(theta).eta)
    assert abs(eta[4] - 3.0) < 1e-3
    # the hybrid path used by the filter reproduces Gaussian moments further up
    state = QuarticState.from_theta(theta)
    np.testing.assert_allclose(state.eta[[2, 4, 6, 8]], [1, 3, 15, 105], rtol=1e-3)


def test_recursion_odd_moments_vanish():
    for theta in [BIMODAL, (0.0, -0.5, 0.0, -0.2), (0.0, 1.0, 0.0, -0.05)]:
        eta = quartic_moment_recursion(theta, quartic_base_integrals(theta).eta)
        np.testing.assert_allclose(eta[[3, 5, 7]], 0.0, atol=1e-9)
        np.testing.assert_array_equal(QuarticState.from_theta(theta).eta[1::2], 0.0)


def test_recursion_bimodal_against_quadrature():
    eta = quartic_moment_recursion(BIMODAL, quartic_base_integrals(BIMODAL).eta)
    oracle = oracle_moments(BIMODAL)
    np.testing.assert_allclose(eta[3:], oracle[3:], rtol=1e-6, atol=1e-12)


def test_recursion_rejects_tiny_theta4():
    with pytest.raises(QuarticError):
        quartic_moment_recursion((0.0, -0.5, 0.0, -1e-13), np.array([1.0, 0.0, 1.0]))


def test_recursion_random_theta(rng):
    for _ in range(50):
        theta = random_theta(rng)
        rec = quartic_moment_recursion(theta, quartic_base_integrals(theta).eta)
        oracle = oracle_moments(theta)
        np.testing.assert_allclose(rec[3:], oracle[3:], rtol=1e-6,
                                   atol=1e-12 * np.abs(oracle).max())


def test_fisher_near_gaussian():
    state = QuarticState.from_theta((0.0, -0.5, 0.0, -1e-9))
    g = quartic_fisher(state.eta)
    assert g[0, 0] == pytest.approx(1.0, abs=1e-4)
    np.testing.assert_array_equal(g, g.T)


def test_fisher_bimodal_is_covariance_of_statistics():
    g = quartic_fisher(QuarticState.from_theta(BIMODAL).eta)
    m = oracle_moments(BIMODAL)
    idx = np.arange(1, 5)
    oracle = m[idx[:, None] + idx[None, :]] - np.outer(m[idx], m[idx])
    np.testing.assert_allclose(g, oracle, rtol=1e-6, atol=1e-12)
    np.linalg.cholesky(g)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1), st.floats(-2, -0.05))
def test_fisher_positive_definite(t1, t2, t3, t4):
    g = quartic_fisher(QuarticState.from_theta((t1, t2, t3, t4)).eta)
    np.testing.assert_array_equal(g, g.T)
    np.linalg.cholesky(g)


# ---------------------------------------------------------------------------
# MAP

def test_map_examples():
    assert quartic_map((0.0, -0.5, 0.0, -0.01)) == 0.0
    assert quartic_map(BIMODAL) == pytest.approx(-np.sqrt(1.5), abs=1e-12)
    x = quartic_map((1.0, 3.0, 0.0, -1.0))
    assert x > 0
    grid = np.linspace(-3, 3, 600001)
    assert x == pytest.approx(grid[np.argmax(exponent((1.0, 3.0, 0.0, -1.0), grid))], abs=1e-4)


def test_map_many_matches_scalar(rng):
    thetas = np.array([random_theta(rng) for _ in range(200)])
    np.testing.assert_array_equal(quartic_map_many(thetas), [quartic_map(t) for t in thetas])


def test_map_is_global_maximum(rng):
    for _ in range(200):
        theta = random_theta(rng)
        x = quartic_map(theta)
        crit = np.roots([4 * theta[3], 3 * theta[2], 2 * theta[1], theta[0]])
        crit = crit[np.abs(crit.imag) < 1e-7].real
        assert exponent(theta, x) >= exponent(theta, crit).max() - 1e-9


# ---------------------------------------------------------------------------
# correction

def test_correct_example():
    state = QuarticState.from_theta((1.0, -1.0, 0.0, -0.1))
    post = quartic_correct(state, 4.0, 1.0, 2.0)
    np.testing.assert_array_equal(post.theta, [3.0, -1.25, 0.0, -0.1])


def test_correct_uninformative():
    state = QuarticState.from_theta((1.0, -1.0, 0.3, -0.1))
    post = quartic_correct(state, 4.0, 1.0, 1e300)
    np.testing.assert_allclose(post.theta, state.theta, rtol=0, atol=1e-290)


def test_corrections_commute():
    state = QuarticState.from_theta((1.0, -1.0, 0.3, -0.1))
    ab = quartic_correct(quartic_correct(state, 2.0, 1.0, 3.0), -1.0, 1.0, 3.0)
    ba = quartic_correct(quartic_correct(state, -1.0, 1.0, 3.0), 2.0, 1.0, 3.0)
    np.testing.assert_allclose(ab.theta, ba.theta, rtol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(-1, 1), st.floats(-1, -0.01))
def test_correct_preserves_higher_parameters(y, V, t3, t4):
    state = QuarticState.from_theta((0.5, -1.0, t3, t4))
    post = quartic_correct(state, y, 1.0, V)
    assert post.theta[2] == t3 and post.theta[3] == t4


def test_correct_rejects_bad_variance():
    with pytest.raises(ValueError):
        quartic_correct(QuarticState.from_theta(BIMODAL), 1.0, 1.0, 0.0)


# ---------------------------------------------------------------------------
# generator expectations and the projected drift

def test_generator_pure_death():
    net = ReactionNetwork(("X",), (Reaction({"X": 1}, {}, 0.7, "death"),))
    eta = QuarticState.from_theta((0.5, -0.5, 0.0, -0.01)).eta
    assert quartic_expect_Lc(net, eta)[0] == pytest.approx(-0.7 * eta[1], rel=1e-14)


def test_generator_immigration_death():
    k1, k2 = 10.0, 1.0
    net = immigration_death(k1, k2)
    eta = QuarticState.from_theta((1.0, -0.05, 0.0, -1e-5)).eta
    ELc = quartic_expect_Lc(net, eta)
    assert ELc[0] == pytest.approx(k1 - k2 * eta[1], rel=1e-13)
    assert ELc[1] == pytest.approx(2 * (k1 * eta[1] - k2 * eta[2]) + (k1 + k2 * eta[1]), rel=1e-13)


@pytest.mark.parametrize("scale", [1.0, 100.0])
def test_generator_bistable_against_quadrature(bistable, scale):
    theta = (19.3, -15.0, 4.3, -0.42) if scale == 100.0 else (1.0, -0.05, 0.0, -1e-5)
    eta = QuarticState.from_theta(theta).eta
    b, s = scalar_generator(bistable, scale)
    x = np.linspace(-50, 150, 2_000_001)
    w = np.exp(exponent(theta, x) - exponent(theta, quartic_map(theta)))
    w /= trapezoid(w, x)
    bx, sx = np.polyval(b[::-1], x), np.polyval(s[::-1], x)
    oracle = [trapezoid(w * (j * bx * x ** (j - 1) + 0.5 * j * (j - 1) * sx * x ** max(j - 2, 0)), x)
              for j in range(1, 5)]
    np.testing.assert_allclose(quartic_expect_Lc(bistable, eta, scale), oracle, rtol=1e-7)


def test_concentration_frame_generator(bistable):
    # b(z) = A h(omega z) / omega and s(z) = sum A^2 h(omega z) / omega^2
    b, s = scalar_generator(bistable, 100.0)
    z = 1.7
    h = np.array([p([100 * z]) for p in bistable.polynomials])
    A = bistable.net_effect[0].astype(float)
    assert np.polyval(b[::-1], z) == pytest.approx(A @ h / 100, rel=1e-13)
    assert np.polyval(s[::-1], z) == pytest.approx((A * A) @ h / 1e4, rel=1e-13)


def test_zero_rate_drift_is_zero():
    net = ReactionNetwork(("X",), (Reaction({"X": 1}, {"X": 1}, 1.0, "idle"),))
    state = QuarticState.from_theta((1.0, -1.0, 0.2, -0.3))
    np.testing.assert_array_equal(quartic_drift(net, state), 0.0)
    np.testing.assert_array_equal(quartic_drift_theta(net, state.theta), 0.0)


def test_compiled_drift_matches_reference(bistable, rng):
    for _ in range(20):
        theta = random_theta(rng)
        state = QuarticState.from_theta(theta)
        ref = quartic_drift(bistable, state, 100.0)
        got = quartic_drift_theta(bistable, theta, 100.0)
        # two Cholesky codes may differ by cond(g) * eps; g reaches 1e12 for far-off means
        g = quartic_fisher(state.eta)
        tol = max(1e-8, 100 * np.linalg.cond(g) * np.finfo(float).eps)
        np.testing.assert_allclose(got, ref, rtol=tol, atol=tol * np.abs(ref).max())
        rhs = quartic_expect_Lc(bistable, state.eta, 100.0)
        assert np.abs(g @ got - rhs).max() <= 1e-10 * np.abs(g).max() * np.abs(got).max()


def test_narrow_density_drift_against_high_precision(bistable):
    # a posterior one count wide near 83 counts: raw moments give cond(g) ~ 1e20
    theta = np.array([8.33982906e3, -5.02591875e3, 7.07754496, -0.643856479])
    got = quartic_drift_theta(bistable, theta, 100.0)
    m = quartic_map(theta)
    t = [mp.mpf(float(v)) for v in theta]
    with mp.workdps(60):
        p = lambda x: ((t[3] * x + t[2]) * x + t[1]) * x * x + t[0] * x  # noqa: E731
        top = p(mp.mpf(m))
        breaks = [m - 1, m - 0.1, m - 0.03, m, m + 0.03, m + 0.1, m + 1]
        ints = [mp.quad(lambda x, k=k: x ** k * mp.exp(p(x) - top), breaks) for k in range(9)]
        eta = [v / ints[0] for v in ints]
        g = mp.matrix(4, 4)
        for i in range(4):
            for j in range(4):
                g[i, j] = eta[i + j + 2] - eta[i + 1] * eta[j + 1]
        M = generator_matrix(*scalar_generator(bistable, 100.0))
        rhs = mp.matrix([mp.fsum(mp.mpf(float(M[i, k])) * eta[k] for k in range(9))
                         for i in range(4)])
        ref = mp.lu_solve(g, rhs)
        err = mp.matrix([mp.mpf(float(v)) for v in got]) - ref
        # error measured in the Fisher metric, the one the projection uses
        rel = mp.sqrt((err.T * g * err)[0]) / mp.sqrt((ref.T * g * ref)[0])
    assert float(rel) < 1e-8


def test_near_gaussian_drift_matches_gpf(birth_death):
    mu, var = 10.0, 10.0
    theta = np.array([mu / var, -0.5 / var, 0.0, -1e-8])
    state = QuarticState.from_theta(theta)
    dtheta = quartic_drift(birth_death, state)
    # d/dt E[c] = g dtheta
    dm = quartic_fisher(state.eta) @ dtheta
    dmu = dm[0]
    dQ = dm[1] - 2 * state.mean * dmu
    gmu, gQ = gpf_drift(birth_death, GaussianState([state.mean], [[state.variance]]))
    assert dmu == pytest.approx(gmu[0], abs=1e-4)
    assert dQ == pytest.approx(gQ[0, 0], abs=1e-4)


def test_stationary_fit_is_nearly_fixed(bistable):
    # exact stationary law of the jump process (detailed balance), in z = x / omega
    k1, k2, k3, k4 = bistable.rates
    omega = bistable.omega
    x = np.arange(801.0)
    birth = k1 + k3 * x * (x - 1)
    death = k2 * x + k4 * x * (x - 1) * (x - 2)
    logp = np.concatenate([[0.0], np.cumsum(np.log(birth[:-1]) - np.log(death[1:]))])
    p = np.exp(logp - logp.max())
    p /= p.sum()
    target = np.array([(p * (x / omega) ** i).sum() for i in range(1, 5)])
    # moment matching minimises the convex log Z(theta) - theta . target; damped Newton
    theta = np.array([11.0, -9.6, 2.9, -0.29])
    state = QuarticState.from_theta(theta)
    for _ in range(60):
        objective = state.log_norm - theta @ target
        step = np.linalg.solve(quartic_fisher(state.eta), state.eta[1:5] - target)
        for _ in range(40):
            trial = theta - step
            if trial[3] < 0:
                new = QuarticState.from_theta(trial)
                if new.log_norm - trial @ target <= objective + 1e-14 * abs(objective):
                    break
            step = 0.5 * step
        theta, state = trial, new
    assert np.abs(state.eta[1:5] - target).max() < 1e-10 * np.abs(target).max()
    ELc = quartic_expect_Lc(bistable, state.eta, omega)
    # the first two statistics only involve moments the fit matches
    assert abs(ELc[0]) < 1e-9 and abs(ELc[1]) < 1e-9

    def speed(th):
        d = quartic_drift_theta(bistable, th, omega)
        return np.sqrt(d @ quartic_fisher(QuarticState.from_theta(th).eta) @ d)

    transient = [speed(np.array([m / v, -0.5 / v, 0.0, -1e-4]))
                 for m, v in [(2.0, 0.05), (1.06, 0.02), (4.04, 0.05), (3.0, 0.3), (2.1, 1.0)]]
    assert speed(theta) < 0.5 * min(transient)


def test_drift_errors_are_raised(bistable):
    with pytest.raises(QuarticError):
        quartic_drift_theta(bistable, (1.0, -1.0, 0.0, 0.5))
