"""Approximate filters for reaction networks observed with Gaussian noise.

Three filters share one prediction/correction loop:

* ``gpf``: Gaussian projection. Mean and covariance follow expectations of the
  propensities under the current Gaussian.
* ``lna``: linear noise approximation. Same equations with propensities and
  Jacobians evaluated at the mean.
* ``qpf``: projection onto densities exp(theta . (x, x^2, x^3, x^4)) for
  one-species networks, run in concentration units z = x / omega.

Between observations the MAP estimate is the mode of the predicted density;
from an observation time onward it is the mode of the corrected density.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.optimize import root

from .gaussian import GaussianState, expect_jacobian, expect_propensity
from .network import ReactionNetwork, rate_equation_rhs
from .ode import DenseTrail, IntegrationError, StepControl, integrate
from .quartic import (QuarticError, QuarticState, quartic_correct, quartic_drift_theta,
                      quartic_map_many)
from .simulate import ObservationSeries

FILTER_KINDS = ("gpf", "qpf", "lna")
QPF_THETA4_INIT = -1e-4
# shared by all filters; benchmark MSEs move by ~1e-6 relative against 1e-6
# tolerances while QPF runs about twice as fast
FILTER_CONTROL = StepControl(abs_tol=1e-5, rel_tol=1e-5)

FilterState = Union[GaussianState, QuarticState]


class FilterDivergence(RuntimeError):
    """The filter state became invalid or the integrator failed twice in a row."""

    def __init__(self, kind: str, t: float, reason: str):
        super().__init__(f"{kind} diverged at t={t:.17g}: {reason}")
        self.kind = kind
        self.t = t
        self.reason = reason


# ---------------------------------------------------------------------------
# Gaussian filters

def _covariance_drift(A, EJ, Eh, Q):
    AJQ = A @ EJ @ Q
    dQ = AJQ + AJQ.T + (A * Eh) @ A.T
    return 0.5 * (dQ + dQ.T)


def gpf_drift(net: ReactionNetwork, state: GaussianState):
    """(dmu, dQ) of the Gaussian projection."""
    A = net.net_effect.astype(float)
    Eh = expect_propensity(net, state)
    EJ = expect_jacobian(net, state)
    return A @ Eh, _covariance_drift(A, EJ, Eh, state.cov)


def lna_drift(net: ReactionNetwork, state: GaussianState):
    """(dmu, dQ) of the linear noise approximation (propensities taken at the mean)."""
    A = net.net_effect.astype(float)
    # a Gaussian with zero covariance is the point mass at the mean, so the
    # compiled expectations give h(mu) and J_h(mu) exactly
    point = GaussianState.trusted(state.mean, np.zeros_like(state.cov))
    h = expect_propensity(net, point)
    J = expect_jacobian(net, point)
    return A @ h, _covariance_drift(A, J, h, state.cov)


def kalman_correct(state: GaussianState, y, G, V) -> GaussianState:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    Q = state.cov
    GQ = G @ Q
    S = GQ @ G.T + V
    try:
        K = np.linalg.solve(S, GQ).T
    except np.linalg.LinAlgError:
        raise ValueError("singular innovation covariance") from None
    mean = state.mean + K @ (y - G @ state.mean)
    cov = Q - K @ GQ
    return GaussianState.trusted(mean, 0.5 * (cov + cov.T))


def gaussian_map(state: GaussianState) -> np.ndarray:
    return np.array(state.mean, dtype=float)


# ---------------------------------------------------------------------------
# initial conditions

def _attractor(net: ReactionNetwork) -> np.ndarray:
    """A positive zero of the rate equation, in counts.

    Searches from z = s (1, ..., 1) for s = 1, 2, 0.5, 4, 0.25, ... and keeps
    the first strictly positive solution.
    """
    for s in (1.0, 2.0, 0.5, 4.0, 0.25, 8.0, 0.125):
        sol = root(lambda z: rate_equation_rhs(net, z), np.full(net.n_species, s))
        if sol.success and np.all(sol.x > 0):
            return sol.x * net.omega
    raise ValueError("could not locate a positive rate-equation fixed point")


def default_gaussian_init(net: ReactionNetwork, obs: ObservationSeries,
                          unobserved_mean=None) -> GaussianState:
    """Prior lifted from the first observation.

    Observed coordinates (nonzero columns of G) get mean G^+ y_1 and covariance
    G^+ V G^+T; the others get ``unobserved_mean`` (default: the rate-equation
    fixed point found from z = 1, in counts) and variance omega.
    """
    if obs.times.size == 0:
        raise ValueError("the default prior needs at least one observation")
    n = net.n_species
    observed = np.any(obs.G != 0, axis=0)
    Gp = np.linalg.pinv(obs.G)
    lifted_mean = Gp @ obs.values[0]
    lifted_cov = Gp @ obs.V @ Gp.T
    mean = np.empty(n)
    if np.all(observed):
        mean[:] = lifted_mean
    else:
        other = _attractor(net) if unobserved_mean is None else np.broadcast_to(
            np.asarray(unobserved_mean, dtype=float), (n,))
        mean[:] = np.where(observed, lifted_mean, other)
    cov = np.diag(np.full(n, float(net.omega)))
    idx = np.flatnonzero(observed)
    cov[np.ix_(idx, idx)] = lifted_cov[np.ix_(idx, idx)]
    return GaussianState(mean, cov)


def default_quartic_init(net: ReactionNetwork, obs: ObservationSeries,
                         theta4: float = QPF_THETA4_INIT) -> QuarticState:
    """Near-Gaussian prior in concentration units from the first observation."""
    if net.n_species != 1:
        raise ValueError("QPF is univariate only")
    if obs.times.size == 0:
        raise ValueError("the default prior needs at least one observation")
    omega = float(net.omega)
    g = float(obs.G[0, 0])
    mu0 = float(obs.values[0, 0]) / (g * omega)
    var0 = float(obs.V[0, 0]) / omega ** 2 + 1.0
    return QuarticState.from_theta([mu0 / var0, -0.5 / var0, 0.0, theta4])


def default_init(net: ReactionNetwork, kind: str, obs: ObservationSeries) -> FilterState:
    kind = _check_kind(net, kind)
    if kind == "qpf":
        return default_quartic_init(net, obs)
    return default_gaussian_init(net, obs)


def _check_kind(net: ReactionNetwork, kind: str) -> str:
    kind = kind.lower()
    if kind not in FILTER_KINDS:
        raise ValueError(f"unknown filter kind {kind!r}; expected one of {FILTER_KINDS}")
    if kind == "qpf" and net.n_species != 1:
        raise ValueError("QPF is univariate only: the network has "
                         f"{net.n_species} species")
    return kind


# ---------------------------------------------------------------------------
# the filtering loop

@dataclass
class FilteredTrajectory:
    """Filter output on a regular grid.

    ``params`` rows are (mu, vec(Q)) in counts for the Gaussian filters and
    theta in concentration units for QPF; ``map`` is always in counts.
    """

    kind: str
    times: np.ndarray
    map: np.ndarray
    params: np.ndarray
    obs_times: np.ndarray
    corrected: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        n, p = self.map.shape[1], self.params.shape[1]
        header = ",".join(["t"] + [f"map_{i + 1}" for i in range(n)]
                          + [f"param_{i + 1}" for i in range(p)])
        data = np.column_stack([self.times, self.map, self.params])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


class _Gaussian:
    def __init__(self, net, kind):
        self.net = net
        self.n = net.n_species
        self.drift = gpf_drift if kind == "gpf" else lna_drift

    def pack(self, state):
        return np.concatenate([state.mean, state.cov.ravel()])

    def unpack(self, y):
        n = self.n
        Q = y[n:].reshape(n, n)
        return GaussianState.trusted(y[:n], 0.5 * (Q + Q.T))

    def rhs(self, t, y):
        dmu, dQ = self.drift(self.net, self.unpack(y))
        return np.concatenate([dmu, dQ.ravel()])

    def correct(self, state, y, G, V):
        return kalman_correct(state, y, G, V)

    def maps(self, trail_states):
        return trail_states[:, :self.n]

    def state_map(self, state):
        return gaussian_map(state)

    def params(self, trail_states):
        return trail_states


class _Quartic:
    def __init__(self, net):
        self.net = net
        self.omega = float(net.omega)

    def pack(self, state):
        return np.array(state.theta, dtype=float)

    def unpack(self, y):
        return QuarticState.from_theta(y)

    def rhs(self, t, y):
        try:
            return quartic_drift_theta(self.net, y, self.omega)
        except QuarticError:
            # invalid trial stage: the integrator treats this like an overflow
            # and retries with a smaller step
            return np.full(4, np.nan)

    def correct(self, state, y, G, V):
        g = float(np.asarray(G).ravel()[0])
        v = float(np.asarray(V).ravel()[0])
        return quartic_correct(state, float(np.asarray(y).ravel()[0]) / self.omega, g,
                               v / self.omega ** 2)

    def maps(self, trail_states):
        return quartic_map_many(trail_states)[:, None] * self.omega

    def state_map(self, state):
        return np.array([state.map() * self.omega])

    def params(self, trail_states):
        return trail_states


def _output_grid(t0, t_end, out_dt, obs_times):
    count = int(np.floor((t_end - t0) / out_dt + 1e-9))
    grid = t0 + out_dt * np.arange(count + 1)
    if grid[-1] < t_end - 1e-12 * max(1.0, abs(t_end)):
        grid = np.append(grid, t_end)
    # snap grid points that coincide with observation times up to rounding
    if obs_times.size:
        idx = np.clip(np.searchsorted(grid, obs_times), 0, grid.size - 1)
        for k, t in zip(idx, obs_times):
            for j in (k - 1, k):
                if 0 <= j < grid.size and abs(grid[j] - t) <= 1e-9 * max(1.0, abs(t)):
                    grid[j] = t
    return grid


def run_filter(net: ReactionNetwork, kind: str, obs: ObservationSeries,
               init: FilterState | None = None, ctrl: StepControl | None = None,
               out_dt: float = 0.01, t0: float = 0.0, t_end: float | None = None
               ) -> FilteredTrajectory:
    """Alternate prediction over [t_{i-1}, t_i] with a correction at each t_i.

    The run continues as pure prediction from the last observation to
    ``t_end`` (default: the last observation time). An interval whose
    integration fails is retried once at half the tolerances; a second failure,
    or an invalid state after a correction, raises :class:`FilterDivergence`.
    """
    kind = _check_kind(net, kind)
    if obs.G.shape[1] != net.n_species:
        raise ValueError("observation matrix does not match the network")
    ctrl = ctrl or FILTER_CONTROL
    obs_times = obs.times
    if obs_times.size and obs_times[0] < t0:
        raise ValueError("observations precede the filter start time")
    if t_end is None:
        t_end = float(obs_times[-1]) if obs_times.size else t0
    if obs_times.size and obs_times[-1] > t_end:
        raise ValueError("observations extend past t_end")
    if init is None:
        init = default_init(net, kind, obs)
    model = _Quartic(net) if kind == "qpf" else _Gaussian(net, kind)

    grid = _output_grid(t0, t_end, out_dt, obs_times)
    maps = np.empty((grid.size, net.n_species))
    params = np.empty((grid.size, model.pack(init).size))
    corrected = []
    state = init
    y = model.pack(state)
    t = t0
    stops = list(obs_times)
    if not stops or stops[-1] < t_end:
        stops.append(t_end)
    for k, t_next in enumerate(stops):
        inside = (grid >= t) & (grid < t_next) if t_next > t else np.zeros(grid.size, bool)
        y, trail = _predict(model, y, t, t_next, ctrl, grid[inside], kind)
        if trail.times.size:
            sl = np.flatnonzero(inside)
            maps[sl] = model.maps(trail.states)
            params[sl] = model.params(trail.states)
        t = t_next
        if k < obs_times.size:
            try:
                state = model.correct(model.unpack(y), obs.values[k], obs.G, obs.V)
            except (QuarticError, ValueError) as err:
                raise FilterDivergence(kind, t, str(err)) from None
            corrected.append(state)
            y = model.pack(state)
    # grid points at or after the final stop
    tail = grid >= t
    if np.any(tail):
        maps[tail] = model.state_map(model.unpack(y))
        params[tail] = y
    return FilteredTrajectory(kind, grid, maps, params, np.asarray(obs_times, float), corrected)


def _predict(model, y, t0, t1, ctrl, grid, kind):
    if t1 == t0:
        return y, DenseTrail(np.empty(0), np.empty((0, y.size)))
    for attempt, c in enumerate((ctrl, ctrl.tightened(0.5))):
        try:
            y1, trail = integrate(model.rhs, y, t0, t1, c, grid)
            if kind == "qpf":
                QuarticState.from_theta(y1)
            return y1, trail
        except (IntegrationError, QuarticError) as err:
            if attempt == 1:
                raise FilterDivergence(kind, getattr(err, "t", t1), str(err)) from None
    raise AssertionError("unreachable")
