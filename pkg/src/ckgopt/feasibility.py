"""Probability of feasibility and the recommendation utility mean * PF."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Sequence

import numpy as np
from scipy.special import ndtr

from .design import BoxDomain, OptimizerConfig, maximize_bounded
from .gp import GpModel, PendingSample

VARIANCE_FLOOR = 1e-12


@dataclass
class ConstraintEnsemble:
    """Independent GP models, one per constraint ``c_k(x) <= 0``."""

    models: List[GpModel] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.models)

    def __iter__(self) -> Iterator[GpModel]:
        return iter(self.models)

    def __getitem__(self, k: int) -> GpModel:
        return self.models[k]


def as_ensemble(constraints) -> ConstraintEnsemble:
    if constraints is None:
        return ConstraintEnsemble([])
    if isinstance(constraints, ConstraintEnsemble):
        return constraints
    return ConstraintEnsemble(list(constraints))


@dataclass(frozen=True)
class FantasySample:
    z_y: float
    z_c: np.ndarray

    def __post_init__(self):
        z_c = np.atleast_1d(np.asarray(self.z_c, dtype=float))
        if not (np.isfinite(self.z_y) and np.all(np.isfinite(z_c))):
            raise ValueError("fantasy draws must be finite")
        object.__setattr__(self, "z_c", z_c)


def feasibility_factor(mean, var):
    """``P[c <= 0]`` for a Gaussian; exact indicator once the variance is resolved."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    resolved = var <= VARIANCE_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        p = ndtr(-mean / np.sqrt(np.where(resolved, 1.0, var)))
    return np.where(resolved, (mean <= 0).astype(float), p)


def pf_current_many(ensemble, X) -> np.ndarray:
    X = np.atleast_2d(X)
    pf = np.ones(len(X))
    for model in as_ensemble(ensemble):
        m, v = model.mean_var(X)
        pf *= feasibility_factor(m, v)
    return pf


def pf_current(ensemble, x) -> float:
    return float(pf_current_many(ensemble, np.atleast_2d(x))[0])


def pf_future_cached(ensemble, caches, x_new, Z_c) -> np.ndarray:
    """One-step-ahead PF at cached points for each row of ``Z_c``.

    ``caches[k]`` is the :class:`QueryCache` of constraint ``k``;
    ``Z_c`` has shape ``(S, K)``. ``x_new`` is a point or a per-constraint
    list of :class:`~ckgopt.gp.PendingSample`. Returns ``(S, m)``.
    """
    ensemble = as_ensemble(ensemble)
    Z_c = np.atleast_2d(Z_c)
    S = Z_c.shape[0]
    if not len(ensemble):
        m = len(caches[0].mean) if caches else 0
        return np.ones((S, m))
    pf = None
    if isinstance(x_new, (list, tuple)) and x_new and isinstance(x_new[0], PendingSample):
        pend = x_new
    else:
        pend = [x_new] * len(ensemble)
    for k, model in enumerate(ensemble):
        c = caches[k]
        st = model.sigma_tilde_cached(c, pend[k])
        var = np.maximum(c.var - st * st, 0.0)
        mean = c.mean[None, :] + Z_c[:, k:k + 1] * st[None, :]
        f = feasibility_factor(mean, np.broadcast_to(var, mean.shape))
        pf = f if pf is None else pf * f
    return pf


def pf_future(ensemble, x, x_new, z_c) -> float:
    ensemble = as_ensemble(ensemble)
    z_c = np.atleast_1d(np.asarray(z_c, dtype=float))
    if z_c.size != len(ensemble):
        raise ValueError("need one draw per constraint")
    if not len(ensemble):
        return 1.0
    caches = [m.cache(np.atleast_2d(x)) for m in ensemble]
    return float(pf_future_cached(ensemble, caches, x_new, z_c[None, :])[0, 0])


def utility_many(objective: GpModel, ensemble, X) -> np.ndarray:
    X = np.atleast_2d(X)
    return objective.mean(X) * pf_current_many(ensemble, X)


def utility(objective: GpModel, ensemble, x) -> float:
    return float(utility_many(objective, ensemble, np.atleast_2d(x))[0])


def recommend(objective: GpModel, ensemble, domain: BoxDomain,
              optimizer_config: OptimizerConfig | None = None, rng_seed=0) -> np.ndarray:
    """Maximiser of posterior mean times probability of feasibility.

    The training inputs are screened alongside the LHS points.
    """
    ensemble = as_ensemble(ensemble)
    x, _ = maximize_bounded(
        lambda X: utility_many(objective, ensemble, X),
        domain,
        optimizer_config,
        rng_seed,
        vectorized=True,
        extra_points=objective.X if objective.n else None,
    )
    return x
