"""Benchmark harness: simulate, observe, filter and score on grids of (V, dt).

Each repetition draws one jump path and one set of standard-normal
observation draws; every grid point and every filter of that repetition
reuses them (paired comparison). The V sweep runs at ``dt_for_V_sweep`` and the
dt sweep at ``V_for_dt_sweep``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path as FilePath

import numpy as np

from .filters import FILTER_KINDS, FilterDivergence, FilteredTrajectory, run_filter
from .network import ReactionNetwork, builtin_network, load_network
from .simulate import Path, observation_times, observe, ssa_simulate


# ---------------------------------------------------------------------------
# scoring

def _segments(truth: Path, est: FilteredTrajectory, t_a: float, t_b: float):
    """Breakpoints on [t_a, t_b] with the truth (constant) and estimate at each end."""
    if t_a < truth.t0 - 1e-12 or t_b > truth.t_end + 1e-12:
        raise ValueError("estimate extends beyond the true path")
    if t_a < est.times[0] - 1e-12 or t_b > est.times[-1] + 1e-12:
        raise ValueError("interval not covered by the estimate")
    if not t_b > t_a:
        raise ValueError("empty time span")
    jumps = truth.jump_times
    jumps = jumps[(jumps > t_a) & (jumps < t_b)]
    inner = est.times[(est.times > t_a) & (est.times < t_b)]
    s = np.union1d(np.concatenate([[t_a, t_b], inner]), jumps)
    idx = np.searchsorted(truth.times, s[:-1], side="right") - 1
    x = truth.states[idx].astype(float)
    e = np.column_stack([np.interp(s, est.times, est.map[:, i]) for i in range(est.map.shape[1])])
    return np.diff(s), x - e[:-1], x - e[1:]


def mse(truth: Path, est: FilteredTrajectory, t_a: float | None = None,
        t_b: float | None = None) -> float:
    """(1/T) * integral of |x(t) - xhat(t)|^2 over the estimate's span.

    The truth is piecewise constant and the estimate is linear between grid
    points, so every segment of the union of jump times and grid points is
    integrated in closed form.
    """
    t_a = float(est.times[0]) if t_a is None else t_a
    t_b = float(est.times[-1]) if t_b is None else t_b
    length, d_a, d_b = _segments(truth, est, t_a, t_b)
    seg = (d_a * d_a + d_a * d_b + d_b * d_b).sum(axis=1) / 3.0
    return float(np.dot(length, seg) / (t_b - t_a))


def mean_abs_error(truth: Path, est: FilteredTrajectory, t_a: float, t_b: float,
                   coordinate: int = 0) -> float:
    """Time average of |x_i(t) - xhat_i(t)| over [t_a, t_b], integrated exactly."""
    length, d_a, d_b = _segments(truth, est, t_a, t_b)
    a, b = d_a[:, coordinate], d_b[:, coordinate]
    same = a * b >= 0
    total = np.where(same, 0.5 * (np.abs(a) + np.abs(b)),
                     0.5 * (a * a + b * b) / np.maximum(np.abs(a) + np.abs(b), 1e-300))
    return float(np.dot(length, total) / (t_b - t_a))


def first_well_switch(path: Path, wells, radius: float, after: float = 0.0,
                      coordinate: int = 0) -> float | None:
    """Time the path first enters the ball of one well after having been near the other."""
    x = path.states[:, coordinate].astype(float)
    near = np.full(x.size, -1)
    for w, centre in enumerate(wells):
        near[np.abs(x - centre) <= radius] = w
    last = -1
    for k in np.flatnonzero(near >= 0):
        if last >= 0 and near[k] != last and path.times[k] >= after:
            return float(path.times[k])
        last = near[k]
    return None


# ---------------------------------------------------------------------------
# configuration

def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _matrix(text):
    rows = [r for r in text.split(";") if r.strip()]
    return [_floats(r) for r in rows]


_PARSERS = {
    "network": str, "T": float, "omega": float, "x0": _floats, "V_grid": _floats,
    "dt_grid": _floats, "reps": int, "G": _matrix, "seed": int,
    "filters": lambda s: [f.lower() for f in s.replace(",", " ").split()],
    "out_grid": float, "V_for_dt_sweep": float, "dt_for_V_sweep": float, "out": str,
    "workers": int,
}


@dataclass
class ExperimentConfig:
    """Flat ``key = value`` experiment description (lists are comma or space separated,
    matrix rows in ``G`` are separated by ``;``)."""

    network: str
    T: float
    x0: list
    V_grid: list
    dt_grid: list
    G: list
    V_for_dt_sweep: float
    dt_for_V_sweep: float
    reps: int = 20
    seed: int = 0
    filters: list = field(default_factory=lambda: list(FILTER_KINDS))
    out_grid: float = 0.01
    omega: float | None = None
    out: str = "results"
    workers: int = 1
    base_dir: str = "."

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.V_grid or not self.dt_grid:
            raise ValueError("V_grid and dt_grid must be nonempty")
        if any(dt >= self.T for dt in [*self.dt_grid, self.dt_for_V_sweep]):
            raise ValueError("observation intervals must be shorter than T")
        if any(v <= 0 for v in [*self.V_grid, self.V_for_dt_sweep]):
            raise ValueError("noise variances must be positive")
        bad = [f for f in self.filters if f not in FILTER_KINDS]
        if bad:
            raise ValueError(f"unknown filters {bad}")

    @classmethod
    def from_text(cls, text: str, base_dir: str = ".", **overrides) -> ExperimentConfig:
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in _PARSERS:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _PARSERS[key](value)
        values.update({k: v for k, v in overrides.items() if v is not None})
        missing = {"network", "T", "x0", "V_grid", "dt_grid", "G", "V_for_dt_sweep",
                   "dt_for_V_sweep"} - set(values)
        if missing:
            raise ValueError(f"missing config keys: {sorted(missing)}")
        return cls(base_dir=str(base_dir), **values)

    @classmethod
    def load(cls, path, **overrides) -> ExperimentConfig:
        path = FilePath(path)
        return cls.from_text(path.read_text(), base_dir=str(path.parent), **overrides)

    def load_network(self) -> ReactionNetwork:
        candidate = FilePath(self.base_dir) / self.network
        if candidate.exists():
            net = load_network(candidate)
        else:
            net = builtin_network(self.network)
        if self.omega is not None and not math.isclose(self.omega, net.omega):
            raise ValueError(f"config omega {self.omega} differs from the network's {net.omega}")
        return net

    def grid_points(self) -> list[tuple[float, float]]:
        """(V, dt) pairs: the V sweep first, then the dt sweep, without duplicates."""
        points = [(v, self.dt_for_V_sweep) for v in self.V_grid]
        points += [(self.V_for_dt_sweep, dt) for dt in self.dt_grid]
        return list(dict.fromkeys(points))

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if key == "base_dir" or value is None:
                continue
            if key == "G":
                value = "; ".join(", ".join(repr(float(v)) for v in row) for row in value)
            elif isinstance(value, list):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# running

@dataclass
class RunRecord:
    rep: int
    V: float
    dt: float
    filter: str
    mse: float | None
    diverged: bool
    path_stream: int
    obs_stream: int
    message: str = ""


@dataclass
class ExperimentReport:
    config: dict
    records: list

    def values(self, filt: str, V: float, dt: float) -> np.ndarray:
        return np.array([r.mse for r in self.records
                         if r.filter == filt and r.V == V and r.dt == dt and not r.diverged])

    def n_diverged(self, filt: str, V: float, dt: float) -> int:
        return sum(1 for r in self.records
                   if r.filter == filt and r.V == V and r.dt == dt and r.diverged)

    def summary(self, filt: str, V: float, dt: float) -> tuple[float, float, int]:
        """(mean, standard error, number of diverged runs) over non-diverged repetitions."""
        vals = self.values(filt, V, dt)
        n_div = self.n_diverged(filt, V, dt)
        if vals.size == 0:
            return math.nan, math.nan, n_div
        err = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else math.nan
        return float(vals.mean()), float(err), n_div

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v
        summaries = []
        filters = self.config["filters"]
        for V, dt in _grid_from_config(self.config):
            for f in filters:
                mean, err, n_div = self.summary(f, V, dt)
                summaries.append({"V": V, "dt": dt, "filter": f, "mean_mse": clean(mean),
                                  "stderr": clean(err), "n_diverged": n_div,
                                  "mse": [r.mse for r in self.records
                                          if r.filter == f and r.V == V and r.dt == dt]})
        return {"config": self.config, "summaries": summaries,
                "runs": [asdict(r) for r in self.records]}

    def write(self, out_dir) -> None:
        out = FilePath(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=1))
        cfg = self.config
        self._write_sweep(out / "mse_vs_V.csv", "V",
                          [(V, cfg["dt_for_V_sweep"]) for V in cfg["V_grid"]], 0)
        self._write_sweep(out / "mse_vs_dt.csv", "dt",
                          [(cfg["V_for_dt_sweep"], dt) for dt in cfg["dt_grid"]], 1)

    def _write_sweep(self, path, axis, points, which):
        lines = [f"{axis},filter,mean_mse,stderr,n_diverged"]
        for point in points:
            for f in self.config["filters"]:
                mean, err, n_div = self.summary(f, *point)
                lines.append(f"{point[which]:.17g},{f},{mean:.17g},{err:.17g},{n_div}")
        FilePath(path).write_text("\n".join(lines) + "\n")


def _grid_from_config(cfg: dict):
    points = [(v, cfg["dt_for_V_sweep"]) for v in cfg["V_grid"]]
    points += [(cfg["V_for_dt_sweep"], dt) for dt in cfg["dt_grid"]]
    return list(dict.fromkeys(points))


def run_repetition(cfg: ExperimentConfig, rep: int, net: ReactionNetwork | None = None,
                   points=None, keep=None) -> list[RunRecord]:
    """All grid points and filters of one repetition on a shared path and noise draw.

    ``keep`` (a dict) receives the path and trajectories when given.
    """
    net = net or cfg.load_network()
    points = points or cfg.grid_points()
    path_stream, obs_stream = 2 * rep, 2 * rep + 1
    path = ssa_simulate(net, cfg.x0, 0.0, cfg.T, cfg.seed, path_stream)
    G = np.asarray(cfg.G, dtype=float)
    if keep is not None:
        keep["path"] = path
    records = []
    for V, dt in points:
        noise = V * np.eye(G.shape[0])
        obs = observe(path, observation_times(0.0, cfg.T, dt), G, noise, cfg.seed, obs_stream)
        for f in cfg.filters:
            try:
                traj = run_filter(net, f, obs, out_dt=cfg.out_grid, t0=0.0, t_end=cfg.T)
            except FilterDivergence as err:
                records.append(RunRecord(rep, V, dt, f, None, True, path_stream, obs_stream,
                                         str(err)))
                continue
            if keep is not None:
                keep[(V, dt, f)] = traj
            records.append(RunRecord(rep, V, dt, f, mse(path, traj), False,
                                     path_stream, obs_stream))
    return records


def _run_rep_job(args):
    cfg, rep, points = args
    return run_repetition(cfg, rep, points=points)


def run_experiment(cfg: ExperimentConfig, points=None) -> ExperimentReport:
    """Run every repetition; the result does not depend on ``cfg.workers``."""
    net = cfg.load_network()
    if "qpf" in cfg.filters and net.n_species != 1:
        raise ValueError("QPF is univariate only: the network has "
                         f"{net.n_species} species")
    if len(cfg.x0) != net.n_species or np.asarray(cfg.G).shape[1] != net.n_species:
        raise ValueError("x0 and G must match the number of species")
    points = points or cfg.grid_points()
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(_run_rep_job, [(cfg, r, points) for r in range(cfg.reps)]))
    else:
        chunks = [run_repetition(cfg, r, net, points) for r in range(cfg.reps)]
    config = asdict(cfg)
    config.pop("base_dir")
    return ExperimentReport(config, [rec for chunk in chunks for rec in chunk])


def run_bistable_experiment(cfg: ExperimentConfig, points=None) -> ExperimentReport:
    net = cfg.load_network()
    if net.n_species != 1:
        raise ValueError("the bistable experiment needs a one-species network")
    return run_experiment(cfg, points)


def run_limitcycle_experiment(cfg: ExperimentConfig, points=None) -> ExperimentReport:
    if "qpf" in cfg.filters:
        raise ValueError("QPF is univariate only and cannot run on the limit-cycle model")
    return run_experiment(cfg, points)


def builtin_config(name: str, **overrides) -> ExperimentConfig:
    """One of the packaged experiment configurations (``bistable`` or ``limitcycle``)."""
    path = FilePath(__file__).with_name("data") / f"{name}.cfg"
    if not path.exists():
        raise ValueError(f"no packaged config named {name!r}")
    return ExperimentConfig.load(path, **overrides)
