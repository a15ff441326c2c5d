"""Quartic exponential family p(x) ~ exp(t1 x + t2 x^2 + t3 x^3 + t4 x^4).

Moments come from quadrature of the max-shifted integrand over the window
where the exponent is within ``EXPONENT_CUTOFF`` of its maximum. eta_3..eta_8
follow from the integration-by-parts recursion when it is well conditioned
(|t4| var^2 >= ``RECURSION_MIN_CONDITION``); nearly Gaussian members amplify
rounding through the 1/t4 factor, so there the quadrature values are kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .network import ReactionNetwork
from .polynomial import univariate_coefficients

EXPONENT_CUTOFF = 45.0
QUAD_TOL = 1e-10
MIN_ABS_THETA4 = 1e-12
MAX_MOMENT = 8
# below this |t4| var^2 the recursion loses more than ~1e-12 relative accuracy
RECURSION_MIN_CONDITION = 1e-2
# panel budget inside filter steps; a density that needs more (a sharp peak
# far from the other mode) is reported as a failure and the step is retried
MAX_PANELS = 256


class QuarticError(ArithmeticError):
    """The natural parameter left the valid region or the numerics failed."""


# ---------------------------------------------------------------------------
# exponent helpers

def exponent(theta, x):
    t1, t2, t3, t4 = theta
    return x * (t1 + x * (t2 + x * (t3 + x * t4)))


@numba.njit(cache=True)
def _q(c, u):
    """Shifted exponent c1 u + c2 u^2 + c3 u^3 + c4 u^4."""
    return u * (c[1] + u * (c[2] + u * (c[3] + u * c[4])))


@numba.njit(cache=True)
def _dq(c, u):
    return c[1] + u * (2.0 * c[2] + u * (3.0 * c[3] + u * 4.0 * c[4]))


@numba.njit(cache=True)
def _d2q(c, u):
    return 2.0 * c[2] + u * (6.0 * c[3] + u * 12.0 * c[4])


@numba.njit(cache=True)
def _taylor_shift(theta, x0):
    """Coefficients of p(x0 + u) in powers of u (index 0 is p(x0))."""
    a = np.zeros(5)
    a[1:] = theta
    c = a.copy()
    # repeated synthetic division by (x - x0)
    for k in range(5):
        for j in range(3, k - 1, -1):
            c[j] += x0 * c[j + 1]
    return c


@numba.njit(cache=True)
def _cubic_real_roots(c):
    """Sorted real zeros of dq by the trigonometric / Cardano formulas, Newton-polished.

    A pair of nearly coincident roots may be dropped; dq keeps its sign across
    such a pair, so it is never a local maximum of q.
    """
    lead = 4.0 * c[4]
    p2 = 3.0 * c[3] / lead
    p1 = 2.0 * c[2] / lead
    p0 = c[1] / lead
    shift = p2 / 3.0
    P = p1 - p2 * shift
    R = 2.0 * shift ** 3 - shift * p1 + p0
    D = 0.25 * R * R + P * P * P / 27.0
    if D > 0.0 or P >= 0.0:
        A = -np.sign(R) * np.cbrt(0.5 * abs(R) + np.sqrt(max(D, 0.0)))
        w = A - P / (3.0 * A) if A != 0.0 else 0.0
        pts = np.array([w - shift])
    else:
        m = 2.0 * np.sqrt(-P / 3.0)
        # two divisions: P * m underflows for |P| below ~1e-205
        arg = 3.0 * R / P / m
        arg = min(1.0, max(-1.0, arg))
        phi = np.arccos(arg) / 3.0
        pts = np.empty(3)
        for k in range(3):
            pts[k] = m * np.cos(phi - 2.0 * np.pi * k / 3.0) - shift
    for k in range(pts.size):
        u = pts[k]
        for _ in range(3):
            d2 = _d2q(c, u)
            if d2 == 0.0:
                break
            step = _dq(c, u) / d2
            if not np.isfinite(step):
                break
            u -= step
        pts[k] = u
    return np.sort(pts)


@numba.njit(cache=True)
def _frame(theta):
    """Centre the exponent at its global maximiser.

    Returns (x_star, c, pts, vals): the shifted coefficients ``c`` satisfy
    p(x_star + u) = c[0] + q(u); ``pts`` are the stationary points in u and
    ``vals`` = q(pts) with max(vals) == 0 up to rounding.
    """
    c = np.zeros(5)
    c[1:] = theta
    x_star = 0.0
    for _ in range(2):
        pts = _cubic_real_roots(c)
        best = 0
        for k in range(pts.size):
            if _q(c, pts[k]) > _q(c, pts[best]):
                best = k
        x_star += pts[best]
        c = _taylor_shift(theta, x_star)
    pts = _cubic_real_roots(c)
    vals = np.empty(pts.size)
    for k in range(pts.size):
        vals[k] = _q(c, pts[k])
    return x_star, c, pts, vals


@numba.njit(cache=True)
def _crossing(c, level, inner, outer_bound, has_bound, direction):
    """Where q falls to ``level`` between ``inner`` (q >= level) and the outer side."""
    if has_bound:
        out = outer_bound
    else:
        d = 1e-3
        out = inner + direction * d
        while _q(c, out) >= level:
            d *= 2.0
            out = inner + direction * d
    lo, hi = inner, out
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _q(c, mid) >= level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@numba.njit(cache=True)
def _window(theta, cutoff):
    """(x_star, c, peak, a, b): q exceeds peak - cutoff only inside [a, b] (u coordinates)."""
    x_star, c, pts, vals = _frame(theta)
    n = pts.size
    peak = vals.max()
    level = peak - cutoff
    k = 0
    while vals[k] < level:
        k += 1
    a = _crossing(c, level, pts[k], pts[k - 1] if k > 0 else 0.0, k > 0, -1.0)
    k = n - 1
    while vals[k] < level:
        k -= 1
    b = _crossing(c, level, pts[k], pts[k + 1] if k < n - 1 else 0.0, k < n - 1, 1.0)
    return x_star, c, peak, a, b


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@numba.njit(cache=True)
def _panel(c, shift, inv_scale, peak, lo, hi, npow, nodes, weights, out):
    half = 0.5 * (hi - lo)
    centre = 0.5 * (hi + lo)
    for k in range(npow):
        out[k] = 0.0
    for q in range(nodes.size):
        u = centre + half * nodes[q]
        y = (u - shift) * inv_scale
        f = weights[q] * np.exp(_q(c, u) - peak) * half
        for k in range(npow):
            out[k] += f
            f *= y


@numba.njit(cache=True)
def _adaptive(c, shift, inv_scale, peak, a, b, npow, tol, nodes, weights, max_panels):
    """Panel-adaptive Gauss-Legendre sums of y^k exp(q(u) - peak), y = (u - shift) * inv_scale.

    ``shift = -x_star, inv_scale = 1`` gives raw powers of x = x_star + u.
    """
    width = b - a
    scale = max(abs((a - shift) * inv_scale), abs((b - shift) * inv_scale), 1.0)
    norm = np.empty(npow)
    for k in range(npow):
        norm[k] = scale ** k
    total = np.zeros(npow)
    stack_lo = np.empty(max_panels)
    stack_hi = np.empty(max_panels)
    stack_val = np.empty((max_panels, npow))
    top = 0
    init = 8
    for i in range(init):
        lo = a + width * i / init
        hi = a + width * (i + 1) / init if i < init - 1 else b
        stack_lo[top] = lo
        stack_hi[top] = hi
        _panel(c, shift, inv_scale, peak, lo, hi, npow, nodes, weights, stack_val[top])
        top += 1
    left = np.empty(npow)
    right = np.empty(npow)
    evaluations = 0
    while top > 0:
        evaluations += 1
        if evaluations > 16 * max_panels:
            return total, False
        top -= 1
        lo = stack_lo[top]
        hi = stack_hi[top]
        coarse = stack_val[top].copy()
        mid = 0.5 * (lo + hi)
        _panel(c, shift, inv_scale, peak, lo, mid, npow, nodes, weights, left)
        _panel(c, shift, inv_scale, peak, mid, hi, npow, nodes, weights, right)
        allowed = tol * (hi - lo) / width
        ok = True
        for k in range(npow):
            if abs(left[k] + right[k] - coarse[k]) > allowed * norm[k]:
                ok = False
                break
        if ok:
            for k in range(npow):
                total[k] += left[k] + right[k]
            continue
        if top + 2 > max_panels:
            return total, False
        stack_lo[top] = lo
        stack_hi[top] = mid
        stack_val[top] = left
        top += 1
        stack_lo[top] = mid
        stack_hi[top] = hi
        stack_val[top] = right
        top += 1
    return total, True


@numba.njit(cache=True)
def _recursion(theta, eta):
    t1, t2, t3, t4 = theta[0], theta[1], theta[2], theta[3]
    for i in range(3, eta.size):
        acc = t1 * eta[i - 3] + 2.0 * t2 * eta[i - 2] + 3.0 * t3 * eta[i - 1]
        if i >= 4:
            acc += (i - 3) * eta[i - 4]
        eta[i] = -acc / (4.0 * t4)


@numba.njit(cache=True)
def _moments(theta, tol, nodes, weights, min_condition):
    """(status, log_norm, eta_0..eta_8); status 0 ok, 1 quadrature failure, 2 bad variance."""
    x_star, c, peak, a, b = _window(theta, EXPONENT_CUTOFF)
    sums, ok = _adaptive(c, -x_star, 1.0, peak, a, b, MAX_MOMENT + 1, tol, nodes, weights,
                         MAX_PANELS)
    eta = sums / sums[0]
    if not ok or not sums[0] > 0.0:
        return 1, 0.0, eta
    if theta[0] == 0.0 and theta[2] == 0.0:
        for k in range(1, MAX_MOMENT + 1, 2):
            eta[k] = 0.0
    var = eta[2] - eta[1] * eta[1]
    if not var > 0.0:
        return 2, 0.0, eta
    if abs(theta[3]) * var * var >= min_condition:
        _recursion(theta, eta)
    return 0, c[0] + peak + np.log(sums[0]), eta


@numba.njit(cache=True)
def _fisher_solve(eta, rhs):
    """Solve g x = rhs by Cholesky; returns (ok, x)."""
    g = np.empty((4, 4))
    for i in range(4):
        for j in range(4):
            g[i, j] = eta[i + j + 2] - eta[i + 1] * eta[j + 1]
    L = np.zeros((4, 4))
    for i in range(4):
        for j in range(i + 1):
            acc = g[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if not acc > 0.0:
                    return False, rhs
                L[i, i] = np.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    z = np.empty(4)
    for i in range(4):
        acc = rhs[i]
        for k in range(i):
            acc -= L[i, k] * z[k]
        z[i] = acc / L[i, i]
    x = np.empty(4)
    for i in range(3, -1, -1):
        acc = z[i]
        for k in range(i + 1, 4):
            acc -= L[k, i] * x[k]
        x[i] = acc / L[i, i]
    return True, x


_BINOM = np.array([[1.0, 0.0, 0.0, 0.0, 0.0],
                   [1.0, 1.0, 0.0, 0.0, 0.0],
                   [1.0, 2.0, 1.0, 0.0, 0.0],
                   [1.0, 3.0, 3.0, 1.0, 0.0],
                   [1.0, 4.0, 6.0, 4.0, 1.0]])


@numba.njit(cache=True)
def _rescale_poly(coef, x0, s):
    """Ascending coefficients of p(x0 + s v) in v, by Horner's rule."""
    n = coef.size
    out = np.zeros(n)
    for k in range(n - 1, -1, -1):
        for j in range(n - 1, 0, -1):
            out[j] = x0 * out[j] + s * out[j - 1]
        out[0] = x0 * out[0] + coef[k]
    return out


@numba.njit(cache=True)
def _generator_kernel(drift, diffusion):
    M = np.zeros((4, MAX_MOMENT + 1))
    for j in range(1, 5):
        for k in range(drift.size):
            M[j - 1, k + j - 1] += j * drift[k]
        if j >= 2:
            for k in range(diffusion.size):
                M[j - 1, k + j - 2] += 0.5 * j * (j - 1) * diffusion[k]
    return M


@numba.njit(cache=True)
def _drift_kernel(theta, drift, diffusion, tol, nodes, weights, min_condition):
    """(status, dtheta); status 3 flags a Fisher matrix that is not positive definite.

    The projection is solved for v = (x - x_star) / s, with s the Gaussian
    standard deviation that would give the same integration window. Raw
    moments of a narrow density far from 0 make g numerically singular;
    the standardised ones do not. theta . c(x) and theta' . c(v) differ by a
    constant, so dtheta = T' dtheta' for a fixed triangular T.
    """
    out = np.full(4, np.nan)
    if not theta[3] < 0.0:
        return 4, out
    for k in range(4):
        if not np.isfinite(theta[k]):
            return 4, out
    x_star, c, peak, a, b = _window(theta, EXPONENT_CUTOFF)
    s = (b - a) / (2.0 * np.sqrt(2.0 * EXPONENT_CUTOFF))
    if not s > 0.0:
        return 2, out
    inv = 1.0 / s
    sums, ok = _adaptive(c, 0.0, inv, peak, a, b, MAX_MOMENT + 1, tol, nodes, weights,
                         MAX_PANELS)
    if not ok or not sums[0] > 0.0:
        return 1, out
    nu = sums / sums[0]
    var = nu[2] - nu[1] * nu[1]
    if not var > 0.0:
        return 2, out
    theta_v = np.array([c[1] * s, c[2] * s * s, c[3] * s ** 3, c[4] * s ** 4])
    if abs(theta_v[3]) * var * var >= min_condition:
        _recursion(theta_v, nu)
    M = _generator_kernel(_rescale_poly(drift, x_star, s) * inv,
                          _rescale_poly(diffusion, x_star, s) * (inv * inv))
    ok, d = _fisher_solve(nu, M @ nu)
    if not ok:
        return 3, out
    for k in range(1, 5):
        acc = 0.0
        for i in range(k, 5):
            acc += d[i - 1] * _BINOM[i, k] * (-x_star) ** (i - k) * inv ** i
        out[k - 1] = acc
    return 0, out


@numba.njit(cache=True)
def _map_kernel(theta):
    x_star, c, pts, vals = _frame(theta)
    best = vals.max()
    tol = 1e-12 * max(1.0, abs(c[0]))
    out = np.inf
    for k in range(pts.size):
        if vals[k] >= best - tol and pts[k] < out:
            out = pts[k]
    return x_star + out


@numba.njit(cache=True)
def _map_many(thetas):
    out = np.empty(thetas.shape[0])
    for i in range(thetas.shape[0]):
        out[i] = _map_kernel(thetas[i])
    return out


def stationary_points(theta) -> np.ndarray:
    """Real zeros of the exponent's derivative."""
    x_star, _, pts, _ = _frame(np.asarray(theta, dtype=float))
    return x_star + pts


def quartic_map(theta) -> float:
    """Global maximiser of the exponent; ties go to the smaller x."""
    theta = np.asarray(theta, dtype=float)
    if not theta[3] < 0:
        raise QuarticError("theta_4 must be negative")
    return float(_map_kernel(theta))


def quartic_map_many(thetas) -> np.ndarray:
    """:func:`quartic_map` applied to each row."""
    thetas = np.ascontiguousarray(thetas, dtype=float).reshape(-1, 4)
    if np.any(thetas[:, 3] >= 0):
        raise QuarticError("theta_4 must be negative")
    return _map_many(thetas)


def density_window(theta):
    """Centred frame and integration window of the density.

    Returns ``(x_star, c, peak, a, b)``: p(x_star + u) = c[0] + q(u), and
    q(u) > peak - cutoff only for u in [a, b].
    """
    return _window(np.asarray(theta, dtype=float), EXPONENT_CUTOFF)


def adaptive_quadrature(theta, powers=3, tol=QUAD_TOL):
    """Shifted integrals of x^k exp(p(x)) for k < ``powers``.

    Returns ``(log_shift, sums)`` with I_k = exp(log_shift) * sums[k]. A panel
    is accepted once its 16-point Gauss-Legendre value agrees with the sum over
    its halves to ``tol`` times the panel's share of the window; integrands
    are normalised by the window's largest |x|^k.
    """
    x_star, c, peak, a, b = density_window(theta)
    sums, ok = _adaptive(c, -x_star, 1.0, peak, a, b, int(powers), float(tol),
                         _GL_NODES, _GL_WEIGHTS, 4096)
    if not ok:
        raise QuarticError("quadrature did not converge")
    return c[0] + peak, sums


@dataclass(frozen=True)
class BaseIntegrals:
    """I_k = exp(shift) * scaled[k] for k = 0..8, and eta_k = I_k / I_0."""

    shift: float
    scaled: np.ndarray
    eta: np.ndarray

    @property
    def log_norm(self) -> float:
        return self.shift + float(np.log(self.scaled[0]))

    @property
    def integrals(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.shift) * self.scaled


def _check_theta(theta):
    if not np.all(np.isfinite(theta)):
        raise QuarticError("non-finite natural parameter")
    if not theta[3] < 0:
        raise QuarticError("theta_4 must be negative for an integrable density")


def _is_even(theta) -> bool:
    return theta[0] == 0.0 and theta[2] == 0.0


def quartic_base_integrals(theta) -> BaseIntegrals:
    theta = np.asarray(theta, dtype=float)
    _check_theta(theta)
    shift, scaled = adaptive_quadrature(theta, MAX_MOMENT + 1)
    if not scaled[0] > 0:
        raise QuarticError("normalising integral vanished")
    if _is_even(theta):
        scaled[1::2] = 0.0
    return BaseIntegrals(shift, scaled, scaled / scaled[0])


def quartic_moment_recursion(theta, eta_base) -> np.ndarray:
    """Extend eta_0..eta_2 to eta_0..eta_8.

    Integration by parts of d/dx[x^(i-3) p(x)] gives
    (i-3) eta_{i-4} + t1 eta_{i-3} + 2 t2 eta_{i-2} + 3 t3 eta_{i-1} + 4 t4 eta_i = 0;
    the eta_{i-4} term carries weight zero at i = 3.
    """
    t1, t2, t3, t4 = np.asarray(theta, dtype=float)
    if abs(t4) < MIN_ABS_THETA4:
        raise QuarticError("|theta_4| too small for the moment recursion")
    eta = np.zeros(MAX_MOMENT + 1)
    eta[:3] = eta_base[:3]
    for i in range(3, MAX_MOMENT + 1):
        acc = t1 * eta[i - 3] + 2 * t2 * eta[i - 2] + 3 * t3 * eta[i - 1]
        if i >= 4:
            acc += (i - 3) * eta[i - 4]
        eta[i] = -acc / (4 * t4)
    return eta


def quartic_fisher(eta) -> np.ndarray:
    """g_ij = eta_{i+j} - eta_i eta_j for i, j = 1..4."""
    eta = np.asarray(eta, dtype=float)
    idx = np.arange(1, 5)
    return eta[idx[:, None] + idx[None, :]] - np.outer(eta[idx], eta[idx])


@dataclass(frozen=True)
class QuarticState:
    theta: np.ndarray
    eta: np.ndarray
    log_norm: float

    @classmethod
    def from_theta(cls, theta) -> QuarticState:
        theta = np.array(theta, dtype=float).reshape(4)
        _check_theta(theta)
        status, log_norm, eta = _moments(theta, QUAD_TOL, _GL_NODES, _GL_WEIGHTS,
                                         RECURSION_MIN_CONDITION)
        if status == 1:
            raise QuarticError("quadrature did not converge")
        if status == 2:
            raise QuarticError("non-positive variance")
        return cls(theta, eta, log_norm)

    @property
    def mean(self) -> float:
        return float(self.eta[1])

    @property
    def variance(self) -> float:
        return float(self.eta[2] - self.eta[1] ** 2)

    def map(self) -> float:
        return quartic_map(self.theta)

    def density(self, x) -> np.ndarray:
        return np.exp(exponent(self.theta, np.asarray(x, dtype=float)) - self.log_norm)


# ---------------------------------------------------------------------------
# generator expectations and the projected drift

def scalar_generator(net: ReactionNetwork, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Ascending coefficients of drift b(z) and diffusion s(z) for z = x / scale.

    b(x) = sum_k A_k h_k(x) and s(x) = sum_k A_k^2 h_k(x) in counts; the
    change of variables gives b(scale z)/scale and s(scale z)/scale^2.
    """
    if net.n_species != 1:
        raise ValueError("the quartic family is univariate; network has "
                         f"{net.n_species} species")
    deg = max(p.degree for p in net.polynomials)
    drift = np.zeros(deg + 1)
    diffusion = np.zeros(deg + 1)
    for a, p in zip(net.net_effect[0], net.polynomials):
        c = univariate_coefficients(p)
        drift[:c.size] += a * c
        diffusion[:c.size] += a * a * c
    powers = float(scale) ** np.arange(deg + 1)
    return drift * powers / scale, diffusion * powers / scale ** 2


def generator_matrix(drift: np.ndarray, diffusion: np.ndarray) -> np.ndarray:
    """4 x 9 matrix M with E[L x^j] = (M @ eta)[j - 1], L f = b f' + s f'' / 2."""
    M = np.zeros((4, MAX_MOMENT + 1))
    for j in range(1, 5):
        for k, c in enumerate(drift):
            M[j - 1, k + j - 1] += j * c
        if j >= 2:
            for k, c in enumerate(diffusion):
                M[j - 1, k + j - 2] += 0.5 * j * (j - 1) * c
    return M


def expect_generator(drift: np.ndarray, diffusion: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """E[L x^j], j = 1..4."""
    return generator_matrix(drift, diffusion) @ np.asarray(eta, dtype=float)


def _generator_cached(net: ReactionNetwork, scale: float) -> np.ndarray:
    cache = net.__dict__.setdefault("_quartic_generators", {})
    M = cache.get(scale)
    if M is None:
        M = cache[scale] = generator_matrix(*scalar_generator(net, scale))
    return M


def _coefficients_cached(net: ReactionNetwork, scale: float):
    cache = net.__dict__.setdefault("_quartic_coefficients", {})
    pair = cache.get(scale)
    if pair is None:
        pair = cache[scale] = scalar_generator(net, scale)
    return pair


def quartic_expect_Lc(net: ReactionNetwork, eta, scale: float = 1.0) -> np.ndarray:
    """E[L c] for c = (x, x^2, x^3, x^4) in the frame z = x / scale."""
    return _generator_cached(net, float(scale)) @ np.asarray(eta, dtype=float)


def solve_fisher(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        factor = cho_factor(g)
    except LinAlgError:
        raise QuarticError("Fisher matrix is not positive definite") from None
    return cho_solve(factor, rhs)


def quartic_drift(net: ReactionNetwork, state: QuarticState, scale: float = 1.0) -> np.ndarray:
    """d theta / dt = g(theta)^-1 E[L c]."""
    return solve_fisher(quartic_fisher(state.eta), quartic_expect_Lc(net, state.eta, scale))


_DRIFT_ERRORS = {1: "quadrature did not converge", 2: "non-positive variance",
                 3: "Fisher matrix is not positive definite", 4: "invalid natural parameter"}


def quartic_drift_theta(net: ReactionNetwork, theta, scale: float = 1.0) -> np.ndarray:
    """:func:`quartic_drift` straight from theta in one compiled pass."""
    drift, diffusion = _coefficients_cached(net, float(scale))
    status, out = _drift_kernel(np.asarray(theta, dtype=float), drift, diffusion,
                                QUAD_TOL, _GL_NODES, _GL_WEIGHTS, RECURSION_MIN_CONDITION)
    if status:
        raise QuarticError(_DRIFT_ERRORS[status])
    return out


def quartic_correct(state: QuarticState, y: float, G: float, V: float) -> QuarticState:
    """Conjugate Bayes update for a scalar Gaussian observation y = G x + noise(V)."""
    if not V > 0:
        raise ValueError("observation variance must be positive")
    theta = state.theta.copy()
    theta[0] += G * y / V
    theta[1] -= G * G / (2 * V)
    return QuarticState.from_theta(theta)
