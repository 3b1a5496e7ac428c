"""Constrained knowledge gradient.

The one-step-lookahead utility ``max_x mu^{n+1}(x) PF^{n+1}(x)`` is
approximated on a small set of inner-problem maximisers (one per fantasy
z-tuple) and, for each Monte-Carlo draw of the constraint fantasies, the
expectation over the objective fantasy is taken exactly with the
upper-envelope algorithm in :func:`kg_discrete`.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import ndtri

from .design import BoxDomain, OptimizerConfig, as_rng, lhs_sample, refine_batch, seed_sequence
from .feasibility import as_ensemble, feasibility_factor, pf_future_cached, recommend
from .gp import GpModel, QueryCache

logger = logging.getLogger(__name__)

# posterior variance (relative to the signal variance) treated as fully resolved
RESOLVED_VARIANCE = 1e-6
_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class CkgConfig:
    """Sizes of the discretisation and Monte-Carlo parts of cKG.

    ``n_y`` objective quantiles and ``n_c_per_constraint`` quantiles per
    constraint give ``n_y * n_c_per_constraint**K`` inner problems.
    ``inner`` controls the screening grid and local search for those;
    ``outer`` the fine optimisation of the best candidates.
    """

    n_y: int = 9
    n_c_per_constraint: int = 3
    mc_samples_nc: int = 20
    candidate_count: int = 32
    top_subset: int = 4
    dedup_tolerance: float = 1e-4
    inner: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(max_evals_per_start=50))
    outer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(max_evals_per_start=30))

    def __post_init__(self):
        for name in ("n_y", "n_c_per_constraint", "mc_samples_nc", "candidate_count", "top_subset"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.top_subset > self.candidate_count:
            raise ValueError("top_subset must not exceed candidate_count")
        if isinstance(self.inner, dict):
            self.inner = OptimizerConfig(**self.inner)
        if isinstance(self.outer, dict):
            self.outer = OptimizerConfig(**self.outer)

    def n_z(self, K: int) -> int:
        return self.n_y * self.n_c_per_constraint ** K


@dataclass
class Discretization:
    points: np.ndarray
    dedup_tolerance: float = 1e-4
    caches: Optional[list] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class EpigraphInput:
    mu: np.ndarray
    sigma: np.ndarray
    mu_star: float = 0.0


def gaussian_quantiles(count: int) -> np.ndarray:
    """``Phi^{-1}(q)`` for ``count`` levels evenly spread over [0.1, 0.9]."""
    if count == 1:
        return np.zeros(1)
    return ndtri(np.linspace(0.1, 0.9, count))


def z_tuples(n_y: int, n_c: int, K: int) -> np.ndarray:
    """Cartesian product of objective and per-constraint quantiles, ``(n_z, 1 + K)``."""
    axes = [gaussian_quantiles(n_y)] + [gaussian_quantiles(n_c)] * K
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, 1 + K)


def kg_discrete(mu, sigma=None, mu_star: float = 0.0) -> float:
    """``E[max_i (mu_i + sigma_i Z)] - mu_star`` for ``Z ~ N(0, 1)``, exactly.

    Lines are sorted by slope; the ones forming the upper envelope are kept
    together with the z-scores of their intersections, and the expectation
    is summed piecewise. Accepts an :class:`EpigraphInput` as first argument.
    """
    if isinstance(mu, EpigraphInput):
        mu, sigma, mu_star = mu.mu, mu.sigma, mu.mu_star
    mu = np.asarray(mu, dtype=float).ravel()
    sigma = np.asarray(sigma, dtype=float).ravel()
    if mu.size == 0 or mu.size != sigma.size:
        raise ValueError("mu and sigma must be nonempty and of equal length")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise ValueError("mu and sigma must be finite")

    # sort by slope, then intercept; keep the largest intercept per slope
    order = np.lexsort((mu, sigma))
    a = mu[order].tolist()
    b = sigma[order].tolist()
    keep_a, keep_b = [], []
    for i in range(len(a)):
        if i + 1 < len(a) and b[i + 1] == b[i]:
            continue
        keep_a.append(a[i])
        keep_b.append(b[i])
    a, b = keep_a, keep_b

    idx = [0]
    ztil = [-math.inf]
    for i in range(1, len(a)):
        while True:
            j = idx[-1]
            z = (a[j] - a[i]) / (b[i] - b[j])
            if len(idx) > 1 and z <= ztil[-1]:
                idx.pop()
                ztil.pop()
                continue
            break
        idx.append(i)
        ztil.append(z)
    ztil.append(math.inf)

    total = 0.0
    for k, i in enumerate(idx):
        lo, hi = ztil[k], ztil[k + 1]
        cdf = 0.5 * (math.erfc(-hi / _SQRT2) - math.erfc(-lo / _SQRT2))
        pdf_lo = 0.0 if math.isinf(lo) else _INV_SQRT2PI * math.exp(-0.5 * lo * lo)
        pdf_hi = 0.0 if math.isinf(hi) else _INV_SQRT2PI * math.exp(-0.5 * hi * hi)
        total += a[i] * cdf - b[i] * (pdf_hi - pdf_lo)
    return total - mu_star


def dedup_points(points, domain: BoxDomain, tol: float) -> np.ndarray:
    """Drop points within ``tol`` (unit-cube distance) of an earlier one."""
    points = np.atleast_2d(points)
    U = domain.to_unit(points)
    kept: List[int] = []
    for i in range(len(U)):
        if all(np.linalg.norm(U[i] - U[j]) > tol for j in kept):
            kept.append(i)
    return points[kept]


class ConstrainedKG:
    """cKG for one fitted objective model and its constraint ensemble.

    ``x_r`` defaults to the current recommendation. Screening-grid
    posteriors are computed once here and reused for every candidate.
    """

    def __init__(self, objective: GpModel, constraints, domain: BoxDomain,
                 config: CkgConfig | None = None, x_r=None, rng_seed=0):
        self.objective = objective
        self.ensemble = as_ensemble(constraints)
        self.domain = domain
        self.config = config or CkgConfig()
        seeds = seed_sequence(rng_seed).spawn(2)
        if x_r is None:
            x_r = recommend(objective, self.ensemble, domain, rng_seed=seeds[0])
        self.x_r = domain.clip(np.asarray(x_r, dtype=float).ravel())
        self.K = len(self.ensemble)
        self.tuples = z_tuples(self.config.n_y, self.config.n_c_per_constraint, self.K)

        grid = lhs_sample(domain, self.config.inner.grid_size(domain.dim), seeds[1])
        parts = [grid, self.x_r[None, :]]
        if objective.n:
            parts.insert(0, objective.X)
        self.grid = np.vstack(parts)
        self._grid_caches = self._caches(self.grid)

    @property
    def models(self):
        return [self.objective] + list(self.ensemble)

    def _caches(self, X) -> List[QueryCache]:
        return [m.cache(X) for m in self.models]

    def draw_constraint_fantasies(self, rng_seed) -> np.ndarray:
        if self.K == 0:
            return np.zeros((1, 0))
        return as_rng(rng_seed).standard_normal((self.config.mc_samples_nc, self.K))

    # -- inner problems ------------------------------------------------------

    def _pending(self, x_new):
        return [m.pending(x_new) for m in self.models]

    def _inner_rowwise(self, pend, X, Z):
        """Inner objective for row ``j`` of ``X`` under z-tuple ``Z[j]``."""
        caches = self._caches(X)
        c_y = caches[0]
        st_y = self.objective.sigma_tilde_cached(c_y, pend[0])
        value = c_y.mean + st_y * Z[:, 0]
        for k, model in enumerate(self.ensemble):
            c = caches[k + 1]
            st = model.sigma_tilde_cached(c, pend[k + 1])
            var = np.maximum(c.var - st * st, 0.0)
            value = value * feasibility_factor(c.mean + st * Z[:, k + 1], var)
        return value

    def _inner_grid(self, pend):
        """Inner objective on the screening grid for every z-tuple, ``(n_z, G)``."""
        c_y = self._grid_caches[0]
        st_y = self.objective.sigma_tilde_cached(c_y, pend[0])
        vals = c_y.mean[None, :] + self.tuples[:, :1] * st_y[None, :]
        if self.K:
            vals = vals * pf_future_cached(self.ensemble, self._grid_caches[1:], pend[1:],
                                           self.tuples[:, 1:])
        return vals

    def build_discretization(self, x_new) -> Discretization:
        x_new = np.asarray(x_new, dtype=float).ravel()
        pend = self._pending(x_new)
        grid_vals = self._inner_grid(pend)
        starts = self.grid[np.argmax(grid_vals, axis=1)]
        Z = self.tuples
        with np.errstate(all="ignore"):
            peaks, _ = refine_batch(lambda X: self._inner_rowwise(pend, X, Z), starts,
                                    self.domain, self.config.inner)
        points = dedup_points(np.vstack([self.x_r[None, :], peaks]), self.domain,
                              self.config.dedup_tolerance)
        return Discretization(points, self.config.dedup_tolerance)

    # -- acquisition value ---------------------------------------------------

    def _disc_caches(self, disc: Discretization):
        if disc.caches is None:
            disc.caches = self._caches(disc.points)
        return disc.caches

    def epigraph_inputs(self, x_new, disc: Discretization, Z_c) -> List[EpigraphInput]:
        """Lines over ``disc`` for each row of ``Z_c``; ``disc.points[0]`` is ``x_r``."""
        pend = self._pending(np.asarray(x_new, dtype=float).ravel())
        caches = self._disc_caches(disc)
        c_y = caches[0]
        st_y = self.objective.sigma_tilde_cached(c_y, pend[0])
        pf = pf_future_cached(self.ensemble, caches[1:], pend[1:], Z_c) if self.K else \
            np.ones((1, len(disc)))
        mu = c_y.mean[None, :] * pf
        sig = st_y[None, :] * pf
        return [EpigraphInput(mu[s], sig[s], float(mu[s, 0])) for s in range(len(pf))]

    def value(self, x_new, disc: Discretization, Z_c=None, rng_seed=0) -> float:
        if Z_c is None:
            Z_c = self.draw_constraint_fantasies(rng_seed)
        return float(np.mean([kg_discrete(e) for e in self.epigraph_inputs(x_new, disc, Z_c)]))

    # -- outer maximisation --------------------------------------------------

    def maximize(self, rng_seed=0):
        """Screen LHS candidates, fine-optimise the best with frozen discretisations.

        Returns ``(x, value)``.
        """
        cfg = self.config
        seeds = seed_sequence(rng_seed).spawn(2)
        cands = lhs_sample(self.domain, cfg.candidate_count, seeds[0])
        if self._resolved(cands):
            logger.info("posterior variance resolved everywhere; falling back to max posterior variance")
            return self.exploration_fallback(cands), 0.0
        Z_c = self.draw_constraint_fantasies(seeds[1])
        discs = [self.build_discretization(c) for c in cands]
        vals = np.array([self.value(c, d, Z_c) for c, d in zip(cands, discs)])
        order = np.argsort(-vals, kind="stable")[: cfg.top_subset]

        top_discs = [discs[i] for i in order]

        def rowwise(X):
            return np.array([self.value(x, d, Z_c) for x, d in zip(X, top_discs)])

        with np.errstate(all="ignore"):
            pts, pvals = refine_batch(rowwise, cands[order], self.domain, cfg.outer)
        best = int(np.argmax(pvals))
        x_best, v_best = pts[best], float(pvals[best])
        if not v_best > 0.0:
            x_best = self.exploration_fallback(cands)
            logger.info("cKG <= 0 at every candidate; falling back to max posterior variance")
        return x_best, v_best

    def _resolved(self, X) -> bool:
        """Whether every model has only jitter-level variance at ``X`` and on the grid."""
        return all(
            np.max(m.var(X)) <= RESOLVED_VARIANCE * m.params.signal_variance
            and np.max(c.var) <= RESOLVED_VARIANCE * m.params.signal_variance
            for m, c in zip(self.models, self._grid_caches)
        )

    def exploration_fallback(self, cands) -> np.ndarray:
        prod = np.ones(len(cands))
        for m in self.models:
            prod *= m.var(cands)
        return cands[int(np.argmax(prod))].copy()


# -- functional interface ------------------------------------------------------

def build_discretization(objective, ensemble, x_new, config: CkgConfig, domain: BoxDomain,
                         x_r=None, rng_seed=0) -> Discretization:
    return ConstrainedKG(objective, ensemble, domain, config, x_r, rng_seed).build_discretization(x_new)


def ckg_value(objective, ensemble, x_new, disc: Discretization, config: CkgConfig,
              rng_seed=0, x_r=None, domain: BoxDomain | None = None) -> float:
    """Monte-Carlo cKG at ``x_new`` over ``disc``.

    ``x_r`` defaults to ``disc.points[0]`` (where :meth:`build_discretization`
    puts the recommendation).
    """
    domain = domain or objective.domain
    if x_r is None:
        x_r = disc.points[0]
    elif not np.allclose(disc.points[0], x_r):
        disc = Discretization(np.vstack([np.ravel(x_r)[None, :], disc.points]),
                              disc.dedup_tolerance)
    acq = ConstrainedKG(objective, ensemble, domain, config, x_r)
    return acq.value(x_new, disc, rng_seed=rng_seed)


def ckg_maximize(objective, ensemble, domain: BoxDomain, config: CkgConfig | None = None,
                 rng_seed=0) -> np.ndarray:
    return ConstrainedKG(objective, ensemble, domain, config, rng_seed=rng_seed).maximize(rng_seed)[0]
