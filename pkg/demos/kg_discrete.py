"""
Expected maximum of lines
=========================

``kg_discrete(mu, sigma)`` returns E[max_i mu_i + sigma_i Z] - mu_star
exactly, through the upper envelope of the lines. Here it is checked
against plain Monte Carlo.
"""
import numpy as np

from ckgopt import kg_discrete

rng = np.random.default_rng(1)
mu = rng.normal(size=6)
sigma = rng.normal(size=6)

exact = kg_discrete(mu, sigma, mu_star=mu.max())
Z = rng.normal(size=1_000_000)
mc = np.max(mu[:, None] + sigma[:, None] * Z, axis=0).mean() - mu.max()
print(f"envelope: {exact:.6f}   monte carlo: {mc:.6f}")

# a line that is never on top contributes nothing
mu2 = np.r_[mu, mu.min() - 10]
sigma2 = np.r_[sigma, 0.0]
print("with a dominated line:", kg_discrete(mu2, sigma2, mu_star=mu.max()))

# equal slopes mean the lines never cross, so nothing is gained
print("parallel lines:", kg_discrete(mu, np.full(6, 0.3), mu_star=mu.max()))
