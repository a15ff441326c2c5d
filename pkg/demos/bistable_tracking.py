"""Tracking a bistable population with three filters.

One jump path of the Schlogl-type network is observed once per time unit with
noise variance 3000 (standard deviation ~55 molecules, about a fifth of the
distance between the wells). Each filter's MAP trail is scored against the
truth, over the whole run and over the five time units after the first jump
between wells.

    python demos/bistable_tracking.py [seed] [outdir]
"""

import sys
from pathlib import Path

import numpy as np

from rnfilter.experiments import first_well_switch, mean_abs_error, mse
from rnfilter.filters import FilterDivergence, run_filter
from rnfilter.network import builtin_network, rate_equation_fixed_points_1d
from rnfilter.simulate import observation_times, observe, ssa_simulate

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 20240
out = Path(sys.argv[2]) if len(sys.argv) > 2 else None

net = builtin_network("bistable")
wells = net.omega * rate_equation_fixed_points_1d(net)
print("rate-equation zeros (counts):", np.round(wells, 1))

T, V, dt = 100.0, 3000.0, 1.0
path = ssa_simulate(net, [106], 0.0, T, seed)
obs = observe(path, observation_times(0.0, T, dt), np.eye(1), V * np.eye(1), seed, 1)
t_s = first_well_switch(path, wells[[0, 2]], 50.0)
print(f"{path.n_jumps} jumps; first well switch at t = {t_s}")

trails = {}
for kind in ("gpf", "lna", "qpf"):
    try:
        trails[kind] = run_filter(net, kind, obs, out_dt=0.01, t_end=T)
    except FilterDivergence as err:
        # the quartic family can be left when the posterior is very narrow
        print(f"{kind}: {err}")
        continue
    line = f"{kind}: MSE {mse(path, trails[kind]):9.1f}"
    if t_s is not None and t_s + 5 <= T:
        line += f"   mean |error| after switch {mean_abs_error(path, trails[kind], t_s, t_s + 5):6.1f}"
    print(line)

if out is not None:
    out.mkdir(parents=True, exist_ok=True)
    path.to_csv(out / "path.csv")
    obs.to_csv(out / "observations.csv")
    for kind, traj in trails.items():
        traj.to_csv(out / f"{kind}.csv")
    print("wrote", out)
