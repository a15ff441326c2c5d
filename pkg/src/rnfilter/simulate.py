"""Exact simulation, synthetic observations and the truncated master equation.

Random streams use numpy's PCG64 generator. A stream for ``(seed, index)`` is
``PCG64(seed + index)``, so every run of an experiment owns an independent,
reproducible stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .network import ReactionNetwork
from .ode import StepControl, integrate


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) + int(stream)))


# ---------------------------------------------------------------------------
# Gillespie direct method

@numba.njit(cache=True)
def _propensities(x, nu, rates, binomial, out):
    n, m = nu.shape
    total = 0.0
    for j in range(m):
        a = rates[j]
        for i in range(n):
            need = nu[i, j]
            if need == 0:
                continue
            xi = x[i]
            if xi < need:
                a = 0.0
                break
            ff = 1.0
            for r in range(need):
                ff *= xi - r
            if binomial:
                for r in range(2, need + 1):
                    ff /= r
            a *= ff
        out[j] = a
        total += a
    return total


@numba.njit(cache=True)
def _ssa_kernel(rng, x0, t0, t_end, nu, effect, rates, binomial):
    n, m = nu.shape
    cap = 1024
    times = np.empty(cap)
    states = np.empty((cap, n), dtype=np.int64)
    x = x0.copy()
    times[0] = t0
    states[0] = x
    count = 1
    props = np.empty(m)
    t = t0
    while True:
        total = _propensities(x, nu, rates, binomial, props)
        if total <= 0.0:
            break
        # inverse-CDF exponential waiting time
        t += -math.log(1.0 - rng.random()) / total
        if t > t_end:
            break
        target = rng.random() * total
        acc = 0.0
        j = m - 1
        for r in range(m):
            acc += props[r]
            if target < acc:
                j = r
                break
        while props[j] == 0.0:  # guard against round-off at the top end
            j -= 1
        for i in range(n):
            x[i] += effect[i, j]
        if count == cap:
            cap *= 2
            new_t = np.empty(cap)
            new_t[:count] = times[:count]
            times = new_t
            new_s = np.empty((cap, n), dtype=np.int64)
            new_s[:count] = states[:count]
            states = new_s
        times[count] = t
        states[count] = x
        count += 1
    return times[:count].copy(), states[:count].copy()


@dataclass
class Path:
    """Piecewise-constant jump trajectory.

    ``times[0]`` is the start time and ``times[k]`` (k >= 1) the k-th jump;
    ``states[k]`` is active on ``[times[k], times[k+1])``.
    """

    times: np.ndarray
    states: np.ndarray
    t_end: float

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def jump_times(self) -> np.ndarray:
        return self.times[1:]

    @property
    def n_jumps(self) -> int:
        return self.times.size - 1

    def to_csv(self, path) -> None:
        """Rows: initial state, one per jump, and a final row at ``t_end``."""
        t = np.append(self.times, self.t_end)
        x = np.vstack([self.states, self.states[-1:]])
        n = x.shape[1]
        header = "t," + ",".join(f"x{i + 1}" for i in range(n))
        _write_csv(path, header, t, x.astype(float), int_columns=True)

    @classmethod
    def from_csv(cls, path) -> Path:
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        times = data[:-1, 0]
        states = np.rint(data[:-1, 1:]).astype(np.int64)
        return cls(times, states, float(data[-1, 0]))


def ssa_simulate(net: ReactionNetwork, x0, t0: float, t_end: float, seed: int,
                 stream: int = 0) -> Path:
    """Sample one trajectory of the jump process with Gillespie's direct method."""
    x0 = np.asarray(x0, dtype=np.int64).reshape(net.n_species)
    if np.any(x0 < 0):
        raise ValueError("initial state must be nonnegative")
    if t_end < t0:
        raise ValueError("t_end must not precede t0")
    times, states = _ssa_kernel(
        make_rng(seed, stream), x0, float(t0), float(t_end),
        np.ascontiguousarray(net.reactant_matrix), np.ascontiguousarray(net.net_effect),
        net.rates.astype(float), net.convention == "binomial")
    return Path(times, states, float(t_end))


def sample_path_at(path: Path, t):
    """State(s) of ``path`` at time(s) ``t`` (right-continuous)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < path.t0) or np.any(t_arr > path.t_end):
        raise ValueError("time outside the path's span")
    idx = np.searchsorted(path.times, t_arr, side="right") - 1
    return path.states[idx]


# ---------------------------------------------------------------------------
# observations

@dataclass
class ObservationSeries:
    times: np.ndarray
    values: np.ndarray  # N x d
    G: np.ndarray  # d x n
    V: np.ndarray  # d x d

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        d, n = self.G.shape
        self.values = np.asarray(self.values, dtype=float).reshape(self.times.size, d)
        if d > n:
            raise ValueError("observation dimension exceeds state dimension")
        _check_spd(self.V)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("observation times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.G.shape[0]

    def to_csv(self, path) -> None:
        header = "t," + ",".join(f"y{i + 1}" for i in range(self.dim))
        _write_csv(path, header, self.times, self.values)

    @classmethod
    def from_csv(cls, path, G, V) -> ObservationSeries:
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        return cls(data[:, 0], data[:, 1:], G, V)


def _check_spd(V: np.ndarray) -> np.ndarray:
    if V.shape[0] != V.shape[1] or not np.allclose(V, V.T):
        raise ValueError("noise covariance must be symmetric")
    try:
        return np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        raise ValueError("noise covariance must be positive definite") from None


def observation_times(t0: float, t_end: float, dt: float) -> np.ndarray:
    """Equally spaced times t0 + i*dt, i = 1..floor((t_end - t0)/dt)."""
    if dt <= 0:
        raise ValueError("observation interval must be positive")
    count = int(math.floor((t_end - t0) / dt + 1e-9))
    return t0 + dt * np.arange(1, count + 1)


def observe(path: Path, times, G, V, seed: int, stream: int = 0) -> ObservationSeries:
    """Noisy linear observations ``y_i = G x(t_i) + L z_i`` with ``L L^T = V``."""
    times = np.asarray(times, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    L = _check_spd(V)
    x = sample_path_at(path, times).astype(float)
    z = make_rng(seed, stream).standard_normal((times.size, G.shape[0]))
    return ObservationSeries(times, x @ G.T + z @ L.T, G, V)


# ---------------------------------------------------------------------------
# truncated master equation

class TruncationError(RuntimeError):
    """Probability leaking out of the truncation box exceeded the cap."""

    def __init__(self, mass_lost: float, dist: TruncatedDistribution):
        super().__init__(f"truncation box too small: mass lost {mass_lost:.3e}")
        self.mass_lost = mass_lost
        self.distribution = dist


@dataclass
class TruncatedDistribution:
    """Probability mass on the box {0..box[0]} x ... x {0..box[n-1]}."""

    box: tuple[int, ...]
    probabilities: np.ndarray
    mass_lost: float = 0.0

    def __post_init__(self):
        self.box = tuple(int(b) for b in self.box)
        self.probabilities = np.asarray(self.probabilities, dtype=float).reshape(
            tuple(b + 1 for b in self.box))

    @classmethod
    def point_mass(cls, box, x) -> TruncatedDistribution:
        p = np.zeros(tuple(b + 1 for b in box))
        p[tuple(x)] = 1.0
        return cls(tuple(box), p)

    def states(self) -> np.ndarray:
        grids = np.meshgrid(*[np.arange(b + 1) for b in self.box], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def to_csv(self, path) -> None:
        x = self.states()
        header = ",".join(f"x{i + 1}" for i in range(len(self.box))) + ",p"
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row, p in zip(x, self.probabilities.ravel()):
                fh.write(",".join(str(int(v)) for v in row) + f",{p:.17g}\n")


def master_generator(net: ReactionNetwork, box) -> tuple[sp.csr_matrix, np.ndarray]:
    """Generator restricted to the box, plus the per-state leak rate out of it."""
    box = tuple(int(b) for b in box)
    shape = tuple(b + 1 for b in box)
    dist = TruncatedDistribution(box, np.zeros(shape))
    states = dist.states()
    size = states.shape[0]
    binomial = net.convention == "binomial"
    props = np.empty((size, net.n_reactions))
    nu = net.reactant_matrix
    for j in range(net.n_reactions):
        a = np.full(size, net.rates[j])
        for i in range(net.n_species):
            need = int(nu[i, j])
            for r in range(need):
                a = a * np.maximum(states[:, i] - r, 0)
            if binomial:
                a = a / math.factorial(need)
        props[:, j] = a
    rows, cols, vals = [], [], []
    leak = np.zeros(size)
    upper = np.array(box)
    for j in range(net.n_reactions):
        target = states + net.net_effect[:, j]
        inside = np.all((target >= 0) & (target <= upper), axis=1)
        moving = np.any(net.net_effect[:, j] != 0)
        if not moving:
            continue
        src = np.nonzero(inside & (props[:, j] > 0))[0]
        dst = np.ravel_multi_index(tuple(target[src].T), shape)
        rows.append(dst)
        cols.append(src)
        vals.append(props[src, j])
        rows.append(src)
        cols.append(src)
        vals.append(-props[src, j])
        out = ~inside
        leak[out] += props[out, j]
    leak_idx = np.nonzero(leak)[0]
    rows.append(leak_idx)
    cols.append(leak_idx)
    vals.append(-leak[leak_idx])
    gen = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(size, size))
    return gen, leak


def master_evolve(net: ReactionNetwork, box, P0: TruncatedDistribution, t0: float,
                  t_end: float, mass_cap: float = 1e-6, ctrl: StepControl | None = None,
                  out_grid=None):
    """Integrate the master equation on a finite box; leaked mass is tracked, not reflected.

    With ``out_grid`` the intermediate distributions are returned as well.
    """
    box = tuple(int(b) for b in box)
    if tuple(P0.box) != box:
        raise ValueError("initial distribution is not supported on the requested box")
    gen, leak = master_generator(net, box)
    ctrl = ctrl or StepControl(abs_tol=1e-10, rel_tol=1e-10)

    def rhs(t, y):
        p = y[:-1]
        return np.append(gen @ p, leak @ p)

    y0 = np.append(P0.probabilities.ravel(), P0.mass_lost)
    y1, trail = integrate(rhs, y0, t0, t_end, ctrl, out_grid)
    dist = TruncatedDistribution(box, y1[:-1], float(y1[-1]))
    if dist.mass_lost > mass_cap:
        raise TruncationError(dist.mass_lost, dist)
    if out_grid is not None:
        snapshots = [TruncatedDistribution(box, row[:-1], float(row[-1])) for row in trail.states]
        return dist, trail.times, snapshots
    return dist


def master_moments(dist: TruncatedDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the box distribution renormalised to unit mass."""
    p = dist.probabilities.ravel()
    p = p / p.sum()
    x = dist.states().astype(float)
    mean = p @ x
    centred = x - mean
    cov = (centred * p[:, None]).T @ centred
    return mean, cov


# ---------------------------------------------------------------------------

def _write_csv(path, header, t, values, int_columns=False):
    values = np.atleast_2d(values)
    fmt = ["%.17g"] + (["%d"] if int_columns else ["%.17g"]) * values.shape[1]
    np.savetxt(path, np.column_stack([t, values]), fmt=fmt, delimiter=",",
               header=header, comments="")
