"""Box domains, Latin hypercube designs and seeded multistart bounded maximisation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc


def seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(0 if seed is None else seed)


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``[lower, upper]`` in R^d."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise ValueError("lower and upper must be 1-d vectors of equal length >= 1")
        if not np.all(lo < hi):
            raise ValueError("lower[i] < upper[i] must hold for every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, dim: int) -> "BoxDomain":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / self.width

    def from_unit(self, u):
        return self.lower + np.asarray(u, dtype=float) * self.width

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass
class OptimizerConfig:
    """Budget of the screening + local-refinement maximiser.

    ``screening_grid_size=None`` means ``100 * d``.
    """

    starts: int = 5
    max_evals_per_start: int = 200
    tolerance: float = 1e-9
    screening_grid_size: Optional[int] = None
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.starts < 1 or self.max_evals_per_start < 1 or self.tolerance <= 0:
            raise ValueError("optimizer settings must be positive")
        if self.screening_grid_size is not None and self.screening_grid_size < 1:
            raise ValueError("screening_grid_size must be positive")

    def grid_size(self, dim: int) -> int:
        return self.screening_grid_size or 100 * dim


def lhs_sample(domain: BoxDomain, count: int, rng_seed=None) -> np.ndarray:
    """``count`` points with exactly one point per stratum on every axis."""
    if count < 1:
        raise ValueError("count must be >= 1")
    sampler = qmc.LatinHypercube(d=domain.dim, seed=as_rng(rng_seed))
    return domain.from_unit(sampler.random(count))


def _batched_fd_gradient(fn, U, step):
    """Central differences of a row-wise function ``fn: (m, d) -> (m,)`` on [0,1]^d."""
    m, d = U.shape
    grad = np.empty((m, d))
    for i in range(d):
        up = U.copy()
        dn = U.copy()
        up[:, i] = np.minimum(U[:, i] + step, 1.0)
        dn[:, i] = np.maximum(U[:, i] - step, 0.0)
        h = up[:, i] - dn[:, i]
        grad[:, i] = (fn(up) - fn(dn)) / h
    return grad


def refine_batch(fn, starts, domain: BoxDomain, config: OptimizerConfig | None = None):
    """Locally maximise ``m`` independent problems at once.

    ``fn`` maps an ``(m, d)`` array (row ``j`` belongs to problem ``j``) to an
    ``(m,)`` array. The sum over rows is separable, so one bounded L-BFGS-B run
    on the stacked vector climbs every row. Rows whose final value is worse
    than (or less finite than) their start keep the start.

    Returns ``(points, values)`` in domain units.
    """
    config = config or OptimizerConfig()
    X0 = np.atleast_2d(np.asarray(starts, dtype=float))
    m, d = X0.shape
    U0 = np.clip(domain.to_unit(X0), 0.0, 1.0)

    def row_values(U):
        v = np.asarray(fn(domain.from_unit(U)), dtype=float).reshape(m)
        return v

    v0 = row_values(U0)

    def negsum(flat):
        U = flat.reshape(m, d)
        v = row_values(U)
        g = _batched_fd_gradient(row_values, U, config.fd_step)
        bad = ~np.isfinite(v) | ~np.all(np.isfinite(g), axis=1)
        v = np.where(bad, -1e10, v)
        g[bad] = 0.0
        return -np.sum(v), -g.ravel()

    try:
        res = minimize(
            negsum,
            U0.ravel(),
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * (m * d),
            options={"maxiter": config.max_evals_per_start, "ftol": config.tolerance,
                     "gtol": 1e-10},
        )
        U1 = np.clip(res.x.reshape(m, d), 0.0, 1.0)
        v1 = row_values(U1)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError):
        U1, v1 = U0, v0
    keep = ~np.isfinite(v1) | (np.isfinite(v0) & (v1 < v0))
    U1 = np.where(keep[:, None], U0, U1)
    v1 = np.where(keep, v0, v1)
    return domain.clip(domain.from_unit(U1)), v1


def maximize_bounded(
    objective_fn: Callable,
    domain: BoxDomain,
    config: OptimizerConfig | None = None,
    rng_seed=None,
    *,
    vectorized: bool = False,
    extra_points=None,
):
    """Screen an LHS set, refine the best ``starts`` points, return the best.

    ``objective_fn`` takes a d-vector, or an ``(m, d)`` array when
    ``vectorized`` is set. ``extra_points`` are added to the screening set.
    Ties go to the lowest start index. Returns ``(argmax, value)``.
    """
    config = config or OptimizerConfig()
    if vectorized:
        fn = objective_fn
    else:
        def fn(X):
            return np.array([objective_fn(x) for x in np.atleast_2d(X)], dtype=float)

    screen = lhs_sample(domain, config.grid_size(domain.dim), rng_seed)
    if extra_points is not None and len(extra_points):
        screen = np.vstack([np.atleast_2d(np.asarray(extra_points, dtype=float)), screen])
    with np.errstate(all="ignore"):
        vals = np.asarray(fn(screen), dtype=float).reshape(len(screen))
    finite = np.isfinite(vals)
    if not finite.any():
        return screen[0].copy(), float("nan")
    score = np.where(finite, vals, -np.inf)
    order = np.argsort(-score, kind="stable")[: min(config.starts, int(finite.sum()))]
    starts = screen[order]
    with np.errstate(all="ignore"):
        pts, pvals = refine_batch(fn, starts, domain, config)
    best = int(np.argmax(np.where(np.isfinite(pvals), pvals, -np.inf)))
    if not np.isfinite(pvals[best]) or pvals[best] < score[order[0]]:
        return starts[0].copy(), float(score[order[0]])
    return pts[best], float(pvals[best])
