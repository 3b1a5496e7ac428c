"""Baseline constrained acquisitions: cEI, NEI, pKG and constrained Thompson sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import ndtr

from .ckg import CkgConfig, ConstrainedKG, Discretization, kg_discrete
from .design import BoxDomain, as_rng, lhs_sample
from .feasibility import as_ensemble, pf_current_many
from .gp import GpModel

STD_FLOOR = 1e-12
# NEI: posterior eigenvalues below this fraction of the signal variance are jitter
NEI_EIG_FLOOR = 1e-6


class BaselineKind(str, Enum):
    CEI = "cEI"
    NEI = "NEI"
    PKG = "pKG"
    CTS = "cTS"


@dataclass
class BaselineChoice:
    kind: BaselineKind
    nei_samples: int = 32
    cts_candidates: int = 500
    kg: CkgConfig = field(default_factory=CkgConfig)

    def __post_init__(self):
        self.kind = BaselineKind(self.kind)
        if self.nei_samples < 1 or self.cts_candidates < 1:
            raise ValueError("baseline parameters must be positive")


def expected_improvement(mean, std, incumbent):
    """Closed-form ``E[max(y - incumbent, 0)]`` for ``y ~ N(mean, std^2)``; vectorised."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std < 0):
        raise ValueError("std must be nonnegative")
    diff = mean - incumbent
    tiny = std <= STD_FLOOR
    s = np.where(tiny, 1.0, std)
    z = diff / s
    ei = diff * ndtr(z) + s * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    out = np.where(tiny, np.maximum(diff, 0.0), np.maximum(ei, 0.0))
    return float(out) if out.ndim == 0 else out


def best_feasible(y, C) -> float:
    """Largest ``y`` among rows with every constraint ``<= 0``; ``-inf`` if none."""
    y = np.asarray(y, dtype=float)
    if C is None or np.size(C) == 0:
        feas = np.ones(len(y), dtype=bool)
    else:
        feas = np.all(np.asarray(C).reshape(len(y), -1) <= 0, axis=1)
    return float(np.max(y[feas])) if feas.any() else -np.inf


def cei_many(objective: GpModel, ensemble, X, incumbent: float) -> np.ndarray:
    """EI times PF; ``incumbent = -inf`` reduces to PF alone."""
    X = np.atleast_2d(X)
    pf = pf_current_many(ensemble, X)
    if not np.isfinite(incumbent):
        return pf
    m, v = objective.mean_var(X)
    return expected_improvement(m, np.sqrt(v), incumbent) * pf


def cei_value(objective: GpModel, ensemble, x, incumbent: float) -> float:
    return float(cei_many(objective, ensemble, np.atleast_2d(x), incumbent)[0])


def observed_incumbent(objective: GpModel, ensemble) -> float:
    """Best feasible observation (model units) using the constraint training targets."""
    ensemble = as_ensemble(ensemble)
    C = np.column_stack([m.y for m in ensemble]) if len(ensemble) else None
    return best_feasible(objective.y, C)


class NoisyEI:
    """cEI averaged over posterior draws of the noiseless values at the data.

    Draws are taken once at construction so the surface is deterministic.
    """

    def __init__(self, objective: GpModel, constraints, sample_count: int = 32, rng_seed=0):
        if objective.n < 1:
            raise ValueError("NEI needs at least one observation")
        self.objective = objective
        self.ensemble = as_ensemble(constraints)
        rng = as_rng(rng_seed)
        X = objective.X
        f = objective.sample_joint(X, rng, sample_count, NEI_EIG_FLOOR)
        cs = [m.sample_joint(X, rng, sample_count, NEI_EIG_FLOOR) for m in self.ensemble]
        self.incumbents = np.array([
            best_feasible(f[s], np.column_stack([c[s] for c in cs]) if cs else None)
            for s in range(sample_count)
        ])

    def values(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        pf = pf_current_many(self.ensemble, X)
        m, v = self.objective.mean_var(X)
        sd = np.sqrt(v)
        total = np.zeros(len(X))
        for inc in self.incumbents:
            total += pf if not np.isfinite(inc) else expected_improvement(m, sd, inc) * pf
        return total / len(self.incumbents)


def nei_value(objective: GpModel, ensemble, x, sample_count: int = 32, rng_seed=0) -> float:
    return float(NoisyEI(objective, ensemble, sample_count, rng_seed).values(np.atleast_2d(x))[0])


class PenalisedKG(ConstrainedKG):
    """Unconstrained hybrid KG scaled by the current PF at the sample location."""

    def __init__(self, objective: GpModel, constraints, domain: BoxDomain,
                 config: CkgConfig | None = None, rng_seed=0):
        # lookahead ignores the constraints, so x_r is the posterior-mean maximiser
        super().__init__(objective, [], domain, config, rng_seed=rng_seed)
        self.penalty = as_ensemble(constraints)

    def value(self, x_new, disc: Discretization, Z_c=None, rng_seed=0) -> float:
        kg = super().value(x_new, disc, Z_c, rng_seed)
        return float(kg * pf_current_many(self.penalty, np.atleast_2d(x_new))[0])


def pkg_value(objective: GpModel, ensemble, x_new, disc: Discretization | None = None,
              rng_seed=0, config: CkgConfig | None = None, domain: BoxDomain | None = None) -> float:
    """``KG(x_new) * PF^n(x_new)``.

    ``disc`` should start with the posterior-mean maximiser (it is prepended
    otherwise); when omitted it is built from the constraint-free z-values.
    """
    acq = PenalisedKG(objective, ensemble, domain or objective.domain, config, rng_seed)
    if disc is None:
        disc = acq.build_discretization(x_new)
    elif not np.allclose(disc.points[0], acq.x_r):
        disc = Discretization(np.vstack([acq.x_r[None, :], disc.points]), disc.dedup_tolerance)
    return acq.value(x_new, disc)


def cts_select(f_sample, c_samples) -> int:
    """Index of the sampled-feasible argmax, else of the least total violation."""
    f_sample = np.asarray(f_sample, dtype=float)
    if c_samples is None or np.size(c_samples) == 0:
        return int(np.argmax(f_sample))
    C = np.asarray(c_samples, dtype=float).reshape(len(f_sample), -1)
    feas = np.all(C <= 0, axis=1)
    if feas.any():
        return int(np.argmax(np.where(feas, f_sample, -np.inf)))
    return int(np.argmin(np.sum(np.maximum(C, 0.0), axis=1)))


def cts_next(objective: GpModel, ensemble, domain: BoxDomain, candidate_count: int = 500,
             rng_seed=0) -> np.ndarray:
    if candidate_count < 1:
        raise ValueError("candidate_count must be >= 1")
    ensemble = as_ensemble(ensemble)
    rng = as_rng(rng_seed)
    cands = lhs_sample(domain, candidate_count, rng)
    f = objective.sample_joint(cands, rng, 1)[0]
    cs = [m.sample_joint(cands, rng, 1)[0] for m in ensemble]
    idx = cts_select(f, np.column_stack(cs) if cs else None)
    return cands[idx].copy()
