"""Gamma projection against gamma moment closure.

For one bimolecular reaction template both reductions carry a gamma law. The
mean equations agree whenever the variances match, but the second-moment
dynamics differ, so the two trajectories drift apart. The truncated master
equation of the same network supplies the exact mean and variance.

    python demos/gamma_closure.py
"""

import numpy as np
from scipy import stats

from rnfilter.closures import BimolecularTemplate, compare_gamma
from rnfilter.simulate import TruncatedDistribution, master_evolve, master_moments

# X -> 2X at rate 1.5 and 2X -> X at rate 0.5
tpl = BimolecularTemplate(1, -1, 1.5, 0.5)
mu0, kappa0, t_end = 2.0, 4.0, 3.0
cmp = compare_gamma(tpl, mu0, kappa0, t_end, out_dt=0.5)

# exact law from the gamma initial condition discretised on the integers
box = (80,)
k = np.arange(box[0] + 1)
law = stats.gamma(kappa0, scale=mu0 / kappa0)
p0 = law.cdf(k + 0.5) - law.cdf(np.maximum(k - 0.5, 0))
p0[0] = law.cdf(0.5)
p0 /= p0.sum()
net = tpl.as_network()
P = TruncatedDistribution(box, p0)

print("   t   proj mu  proj var   clos mu  clos var   exact mu exact var")
t_prev = 0.0
for row_p, row_c, t in zip(cmp.projection, cmp.closure, cmp.times):
    if t > t_prev:
        P = master_evolve(net, box, P, t_prev, t)
        t_prev = t
    mean, cov = master_moments(P)
    print(f"{t:4.1f} {row_p[0]:9.4f} {row_p[2]:9.4f} {row_c[0]:9.4f} {row_c[1]:9.4f} "
          f"{mean[0]:10.4f} {cov[0, 0]:9.4f}")
