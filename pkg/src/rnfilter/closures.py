"""Moment closures: the normal closure and a gamma projection / gamma closure pair.

The normal closure is written through raw second moments, independently of
the Gaussian projection filter's covariance equation, so the two can be
cross-checked. The gamma variants are tied to the one-species template with
net effects (a1, a2) and propensities (k1 x, k2 x (x - 1)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import GaussianState, expect_propensity, expect_state_propensity
from .network import Reaction, ReactionNetwork
from .ode import StepControl, integrate

_SHIFT_TO = 8.0
# Bernoulli-number coefficients of the asymptotic series
_DIGAMMA_SERIES = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)
_TRIGAMMA_SERIES = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)
POLE_TOL = 1e-12


class ClosureError(ArithmeticError):
    """A closure formula hit one of its poles."""


# ---------------------------------------------------------------------------
# normal closure

def normal_closure_drift(net: ReactionNetwork, mu, Q):
    """(dmu, dQ) from the raw-moment equations closed with Gaussian moments.

    d E[x]     = A E[h]
    d E[x x^T] = E[x h^T] A^T + A E[h x^T] + A diag(E[h]) A^T
    dQ         = d E[x x^T] - dmu mu^T - mu dmu^T
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    state = GaussianState.trusted(mu, Q)
    A = net.net_effect.astype(float)
    Eh = expect_propensity(net, state)
    Exh = expect_state_propensity(net, state)
    dmu = A @ Eh
    cross = Exh @ A.T
    dM = cross + cross.T + (A * Eh) @ A.T
    dQ = dM - np.outer(dmu, mu) - np.outer(mu, dmu)
    return dmu, 0.5 * (dQ + dQ.T)


# ---------------------------------------------------------------------------
# digamma and trigamma

def _check_positive(x):
    if not x > 0:
        raise ValueError("argument must be positive")


def digamma(x: float) -> float:
    """psi(x) for x > 0: shift to x >= 8 with psi(x) = psi(x + 1) - 1/x, then the asymptotic series."""
    x = float(x)
    _check_positive(x)
    acc = 0.0
    while x < _SHIFT_TO:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _DIGAMMA_SERIES:
        series += c * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x: float) -> float:
    """psi'(x) for x > 0, with psi'(x) = psi'(x + 1) + 1/x^2 and the asymptotic series."""
    x = float(x)
    _check_positive(x)
    acc = 0.0
    while x < _SHIFT_TO:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv2 * inv
    for c in _TRIGAMMA_SERIES:
        series += c * power
        power *= inv2
    return acc + inv + 0.5 * inv2 + series


# ---------------------------------------------------------------------------
# gamma projection and gamma closure

@dataclass(frozen=True)
class BimolecularTemplate:
    """One species with h(x) = (k1 x, k2 x (x - 1)) and net effects (a1, a2)."""

    a1: int
    a2: int
    k1: float
    k2: float

    def __post_init__(self):
        if int(self.a1) != self.a1 or int(self.a2) != self.a2:
            raise ValueError("net effects must be integers")
        if not (self.k1 >= 0 and self.k2 >= 0):
            raise ValueError("rate constants must be nonnegative")

    def as_network(self, omega: float = 1.0) -> ReactionNetwork:
        """X -> (1 + a1) X and 2 X -> (2 + a2) X as a reaction network."""
        if self.a1 < -1 or self.a2 < -2:
            raise ValueError("net effects too negative for a mass-action reaction")
        reactions = (
            Reaction({"X": 1}, {"X": 1 + self.a1} if 1 + self.a1 else {}, self.k1, "r1"),
            Reaction({"X": 2}, {"X": 2 + self.a2} if 2 + self.a2 else {}, self.k2, "r2"),
        )
        return ReactionNetwork(("X",), reactions, omega)


def _gamma_common(tpl):
    a1, a2, k1, k2 = tpl.a1, tpl.a2, tpl.k1, tpl.k2
    return (a1 * k1 - a2 * k2), a2 * k2, (a1 * a1 * k1 - a2 * a2 * k2), a2 * a2 * k2


def gamma_projection_drift(tpl: BimolecularTemplate, mu: float, kappa: float):
    """(dmu, dkappa) of the projection onto gamma densities with mean mu and shape kappa."""
    if not (mu > 0 and kappa > 0):
        raise ValueError("mu and kappa must be positive")
    if abs(kappa - 1.0) < POLE_TOL:
        raise ClosureError("kappa = 1 is a pole of the shape equation")
    lin, quad, diff1, diff2 = _gamma_common(tpl)
    denom = 1.0 - kappa * trigamma(kappa)
    if abs(denom) < POLE_TOL:
        raise ClosureError("1 - kappa psi'(kappa) vanished")
    dmu = lin * mu + quad * mu * mu + quad * mu * mu / kappa
    bracket = quad * mu + 0.5 * diff2 * kappa + diff1 * kappa * kappa / (2.0 * mu * (kappa - 1.0))
    return dmu, bracket / denom


def gamma_closure_drift(tpl: BimolecularTemplate, mu: float, sigma2: float):
    """(dmu, dsigma2) with the third moment closed by E[x^3] = (mu^2 + 2 s2)(mu^2 + s2)/mu."""
    if not mu > 0:
        raise ClosureError("the gamma closure has a pole at mu = 0")
    lin, quad, diff1, diff2 = _gamma_common(tpl)
    dmu = lin * mu + quad * mu * mu + quad * sigma2
    m2 = sigma2 + mu * mu
    dsigma2 = (2.0 * lin * sigma2 + 4.0 * quad * m2 * sigma2 / mu
               + diff1 * mu + diff2 * m2)
    return dmu, dsigma2


def gamma_third_moment(mu: float, sigma2: float) -> float:
    """E[x^3] of the gamma law with mean mu and variance sigma2."""
    return (mu * mu + 2.0 * sigma2) * (mu * mu + sigma2) / mu


@dataclass
class GammaComparison:
    """Trajectories of both gamma approximations on a shared grid."""

    times: np.ndarray
    projection: np.ndarray  # columns mu, kappa, sigma2 = mu^2 / kappa
    closure: np.ndarray  # columns mu, sigma2

    def to_csv(self, path) -> None:
        header = "t,proj_mu,proj_kappa,proj_sigma2,clos_mu,clos_sigma2"
        data = np.column_stack([self.times, self.projection, self.closure])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def compare_gamma(tpl: BimolecularTemplate, mu0: float, kappa0: float, t_end: float,
                  out_dt: float = 0.01, ctrl: StepControl | None = None) -> GammaComparison:
    """Integrate both approximations from the same gamma initial law."""
    grid = np.linspace(0.0, t_end, int(round(t_end / out_dt)) + 1)

    def proj(t, y):
        return np.array(gamma_projection_drift(tpl, y[0], y[1]))

    def clos(t, y):
        return np.array(gamma_closure_drift(tpl, y[0], y[1]))

    _, p = integrate(proj, [mu0, kappa0], 0.0, t_end, ctrl, grid)
    _, c = integrate(clos, [mu0, mu0 * mu0 / kappa0], 0.0, t_end, ctrl, grid)
    projection = np.column_stack([p.states, p.states[:, 0] ** 2 / p.states[:, 1]])
    return GammaComparison(grid, projection, c.states)
