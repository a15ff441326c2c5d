"""Exact laws versus simulation for the bistable network.

The truncated master equation is integrated from a point mass in the lower
well and compared with the empirical law of independent SSA paths. Both
modes of the stationary law sit near Omega times the stable rate-equation
zeros.

    python demos/master_equation_oracle.py [n_paths]
"""

import sys

import numpy as np
from scipy import stats
from scipy.sparse.linalg import spsolve

from rnfilter.network import builtin_network, rate_equation_fixed_points_1d
from rnfilter.simulate import (TruncatedDistribution, master_evolve, master_generator,
                              master_moments, ssa_simulate)

n_paths = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
net = builtin_network("bistable")
box, x0, t_end = (700,), (106,), 2.0

P = master_evolve(net, box, TruncatedDistribution.point_mass(box, x0), 0.0, t_end)
mean, cov = master_moments(P)
print(f"master equation at t={t_end}: mean {mean[0]:.2f}, variance {cov[0, 0]:.1f}, "
      f"mass lost {P.mass_lost:.1e}")

finals = np.array([ssa_simulate(net, x0, 0.0, t_end, 7, k).states[-1, 0] for k in range(n_paths)])
print(f"SSA over {n_paths} paths: mean {finals.mean():.2f}, variance {finals.var(ddof=1):.1f}")

# coarse histogram comparison on 25-count bins
edges = np.arange(0, box[0] + 26, 25)
p = P.probabilities.ravel()
expected = np.add.reduceat(p, edges[:-1][edges[:-1] <= box[0]]) * n_paths
observed = np.histogram(finals, bins=edges)[0][:expected.size]
keep = expected >= 5
res = stats.chisquare(observed[keep], expected[keep] * observed[keep].sum() / expected[keep].sum())
print(f"chi-square over {keep.sum()} bins: p = {res.pvalue:.3f}")

# the stationary law solves gen @ p = 0 with sum(p) = 1; it is bimodal with
# modes near the stable zeros
gen, _ = master_generator(net, box)
A = gen.tolil()
A[0, :] = 1.0
rhs = np.zeros(box[0] + 1)
rhs[0] = 1.0
q = spsolve(A.tocsr(), rhs)
peaks = [k for k in range(1, q.size - 1) if q[k] >= q[k - 1] and q[k] > q[k + 1]]
print("stationary modes:", peaks, " Omega * zeros:",
      np.round(net.omega * rate_equation_fixed_points_1d(net), 1))
