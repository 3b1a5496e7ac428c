"""
GP surrogate basics
===================

Fit a squared-exponential GP to a handful of noisy samples of a 1-d
function, then look at how one more observation would move the posterior.
"""
import numpy as np

from ckgopt import BoxDomain, FitConfig, gp_fit, lhs_sample

domain = BoxDomain([0.0], [1.0])
f = lambda X: np.sin(8 * X[:, 0]) * X[:, 0] + 0.5 * X[:, 0]  # noqa: E731

rng = np.random.default_rng(0)
X = lhs_sample(domain, 8, rng_seed=0)
y = f(X) + 0.01 * rng.normal(size=len(X))

model = gp_fit(X, y, domain, FitConfig(n_starts=8))
print("lengthscale (unit cube):", model.params.lengthscales)
print("signal variance:", model.params.signal_variance, " noise:", model.params.noise_variance)

###############################################################################
# Posterior on a grid, back in the original output units.
grid = np.linspace(0, 1, 11)[:, None]
mu, var = model.mean_var(grid)
for x, m, s, t in zip(grid[:, 0], model.to_original(mu), np.sqrt(var) * model.output_scale, f(grid)):
    print(f"x={x:.1f}  mean={m:+.3f}  sd={s:.3f}  truth={t:+.3f}")

###############################################################################
# sigma_tilde(x, x_new) is how far the mean at x moves per unit of the
# standardised fantasy outcome at x_new. With eight points already
# spread over the interval the model is confident, so the values are small.
x_new = np.array([0.5])
st = model.sigma_tilde_many(grid, x_new)
print("sigma_tilde around x_new=0.5:", np.round(st, 4))

# conditioning on an actual value shrinks the variance at x_new
post = model.conditioned(x_new, model.to_model(f(x_new[None])[0]))
print("var at x_new before/after:", model.var(x_new[None])[0], post.var(x_new[None])[0])
