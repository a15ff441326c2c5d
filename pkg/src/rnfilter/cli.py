"""Command line front end: ``rnfilter <subcommand> ...``.

Exit status is 0 on success, 1 for usage errors (bad flags, missing or
malformed input files, unsupported requests) and 2 for numerical failures
(filter divergence, integration failure, truncation leak, closure poles).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path as FilePath

import numpy as np

from .closures import BimolecularTemplate, ClosureError, compare_gamma
from .experiments import ExperimentConfig, _floats, _matrix, builtin_config, run_experiment
from .filters import FILTER_KINDS, FilterDivergence, _check_kind, run_filter
from .network import ReactionNetwork, builtin_network, load_network
from .ode import IntegrationError, StepControl
from .quartic import QuarticError
from .simulate import (ObservationSeries, Path, TruncatedDistribution, TruncationError,
                       master_evolve, observation_times, observe, ssa_simulate)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
NUMERICAL_ERRORS = (FilterDivergence, IntegrationError, QuarticError, ClosureError,
                    TruncationError, FloatingPointError, np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default; usage errors map to 1 here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _network(spec: str) -> ReactionNetwork:
    path = FilePath(spec)
    if path.exists():
        return load_network(path)
    if path.suffix or "/" in spec:
        raise UsageError(f"network file not found: {spec}")
    return builtin_network(spec)


def _existing(path: str) -> FilePath:
    p = FilePath(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    return p


def _sink(path: str):
    return sys.stdout if path == "-" else path


def _ints(text: str) -> list[int]:
    values = _floats(text)
    if any(v != int(v) for v in values):
        raise UsageError(f"expected integers, got {text!r}")
    return [int(v) for v in values]


def _observation_model(args, n_species: int):
    G = np.asarray(_matrix(args.G), float) if args.G else np.eye(n_species)
    V = np.atleast_2d(np.asarray(_matrix(args.V), float))
    if V.size == 1 and G.shape[0] > 1:
        V = float(V[0, 0]) * np.eye(G.shape[0])
    return G, V


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    net = _network(args.network)
    x0 = _ints(args.x0)
    if len(x0) != net.n_species:
        raise UsageError(f"x0 has {len(x0)} entries, the network has {net.n_species} species")
    path = ssa_simulate(net, x0, args.t0, args.t_end, args.seed, args.stream)
    path.to_csv(_sink(args.out))
    return EXIT_OK


def cmd_observe(args) -> int:
    path = Path.from_csv(_existing(args.path))
    G, V = _observation_model(args, path.states.shape[1])
    times = observation_times(path.t0, path.t_end, args.dt)
    observe(path, times, G, V, args.seed, args.stream).to_csv(_sink(args.out))
    return EXIT_OK


def cmd_filter(args) -> int:
    net = _network(args.network)
    _check_kind(net, args.kind)
    G, V = _observation_model(args, net.n_species)
    obs = ObservationSeries.from_csv(_existing(args.obs), G, V)
    ctrl = StepControl(abs_tol=args.tol, rel_tol=args.tol) if args.tol else None
    traj = run_filter(net, args.kind, obs, ctrl=ctrl, out_dt=args.out_dt, t0=args.t0,
                      t_end=args.t_end)
    traj.to_csv(_sink(args.out))
    return EXIT_OK


def cmd_experiment(args) -> int:
    overrides = dict(reps=args.reps, seed=args.seed, workers=args.workers)
    if FilePath(args.config).exists():
        cfg = ExperimentConfig.load(args.config, **overrides)
    elif FilePath(args.config).suffix or "/" in args.config:
        raise UsageError(f"config file not found: {args.config}")
    else:
        cfg = builtin_config(args.config, **overrides)
    if args.filters:
        cfg.filters = [f.strip().lower() for f in args.filters.split(",")]
        cfg.__post_init__()
    report = run_experiment(cfg)
    out = args.out or cfg.out
    report.write(out)
    for V, dt in cfg.grid_points():
        cells = []
        for f in cfg.filters:
            mean, err, n_div = report.summary(f, V, dt)
            cells.append(f"{f}={mean:.6g}+-{err:.2g} (div {n_div})")
        print(f"V={V:g} dt={dt:g}: " + ", ".join(cells))
    print(f"wrote {FilePath(out) / 'report.json'}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    net = _network(args.network)
    x0, box = _ints(args.x0), _ints(args.box)
    if len(x0) != net.n_species or len(box) != net.n_species:
        raise UsageError("x0 and box need one entry per species")
    if any(x > b for x, b in zip(x0, box)):
        raise UsageError("x0 lies outside the box")
    P0 = TruncatedDistribution.point_mass(box, x0)
    ctrl = StepControl(abs_tol=args.tol, rel_tol=args.tol)
    dist = master_evolve(net, box, P0, 0.0, args.t_end, args.mass_cap, ctrl)
    dist.to_csv(_sink(args.out))
    print(json.dumps({"mass_lost": dist.mass_lost}), file=sys.stderr)
    return EXIT_OK


def cmd_closure_compare(args) -> int:
    tpl = BimolecularTemplate(args.a1, args.a2, args.k1, args.k2)
    cmp = compare_gamma(tpl, args.mu0, args.kappa0, args.t_end, args.out_dt)
    cmp.to_csv(_sink(args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rnfilter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="sample one SSA path and write it as CSV")
    p.add_argument("--network", required=True, help="network file or bundled name")
    p.add_argument("--x0", required=True, help="initial counts, comma separated")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("observe", help="noisy linear observations of a path CSV")
    p.add_argument("--path", required=True)
    p.add_argument("--dt", type=float, required=True, help="observation interval")
    p.add_argument("--V", required=True, help="noise covariance (scalar or rows split by ';')")
    p.add_argument("--G", help="observation matrix (default: identity)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_observe)

    p = sub.add_parser("filter", help="run one filter over an observation CSV")
    p.add_argument("--network", required=True)
    p.add_argument("--kind", required=True, choices=FILTER_KINDS)
    p.add_argument("--obs", required=True)
    p.add_argument("--V", required=True)
    p.add_argument("--G")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t-end", type=float)
    p.add_argument("--out-dt", type=float, default=0.01)
    p.add_argument("--tol", type=float, help="integrator tolerance (default 1e-5)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("experiment", help="benchmark grid from a config file")
    p.add_argument("--config", required=True, help="config file or bundled name")
    p.add_argument("--out", help="output directory (default: the config's 'out')")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--filters", help="comma separated subset of the config's filters")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle", help="truncated master equation from a point mass")
    p.add_argument("--network", required=True)
    p.add_argument("--x0", required=True)
    p.add_argument("--box", required=True, help="upper count bound per species")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--mass-cap", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("closure-compare", help="gamma projection vs gamma closure")
    for name in ("a1", "a2"):
        p.add_argument(f"--{name}", type=int, required=True)
    for name in ("k1", "k2", "mu0", "kappa0", "t-end"):
        p.add_argument(f"--{name}", type=float, required=True)
    p.add_argument("--out-dt", type=float, default=0.01)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_closure_compare)
    return parser


def cli_dispatch(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


def main(argv=None) -> None:
    sys.exit(cli_dispatch(argv))
