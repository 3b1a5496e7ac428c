"""
One cKG step on Mystery
=======================

Fit objective and constraint GPs to an initial design, pick the next
sample with the constrained knowledge gradient and compare the current
recommendation with the known optimum.
"""
import numpy as np

from ckgopt import CkgConfig, ConstrainedKG, FitConfig, gp_fit, lhs_sample, recommend
from ckgopt import get_problem, opportunity_cost

spec = get_problem("mystery")
X = lhs_sample(spec.domain, 10, rng_seed=3)
y = spec.objective_fn(X)
C = spec.constraint_values(X)

objective = gp_fit(X, y, spec.domain, FitConfig(noise_variance=1e-6, offset="min"))
constraint = gp_fit(X, C[:, 0], spec.domain, FitConfig(noise_variance=1e-6, offset="zero"))
print("feasible initial points:", int(np.sum(C[:, 0] <= 0)), "of", len(X))

x_r = recommend(objective, [constraint], spec.domain)
print("recommendation:", x_r, " OC:", opportunity_cost(spec, x_r))

###############################################################################
# A smaller candidate screen keeps this demo quick. The defaults are the
# ones used in benchmarks.
acq = ConstrainedKG(objective, [constraint], spec.domain,
                    CkgConfig(candidate_count=30, top_subset=3))
x_next, value = acq.maximize(rng_seed=0)
print("next sample:", x_next, " cKG value:", value)
print("true optimum:", spec.true_opt_point, " f* =", spec.true_opt_value)
