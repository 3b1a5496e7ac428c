"""Synthetic constrained benchmark problems and opportunity-cost scoring.

The benchmark formulas are minimisation problems; the stored objectives are
their negations so that everything else in the package can maximise.
Constraints are feasible when ``<= 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from .design import BoxDomain, as_rng

DOMAIN_TOL = 1e-9


def _check(x, domain: BoxDomain):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != domain.dim:
        raise ValueError(f"expected {domain.dim}-dimensional input")
    if np.any(x < domain.lower - DOMAIN_TOL) or np.any(x > domain.upper + DOMAIN_TOL):
        raise ValueError(f"input outside the domain [{domain.lower}, {domain.upper}]")
    return x[..., 0], x[..., 1]


MYSTERY_DOMAIN = BoxDomain([0.0, 0.0], [5.0, 5.0])
NEW_BRANIN_DOMAIN = BoxDomain([-5.0, 0.0], [10.0, 15.0])
TEST_FUNCTION_2_DOMAIN = BoxDomain([0.0, 0.0], [1.0, 1.0])


def mystery(x):
    """Negated Mystery objective and its single constraint."""
    x1, x2 = _check(x, MYSTERY_DOMAIN)
    raw = (2 + 0.01 * (x2 - x1 ** 2) ** 2 + (1 - x1) ** 2 + 2 * (2 - x2) ** 2
           + 7 * np.sin(0.5 * x1) * np.sin(0.7 * x1 * x2))
    con = -np.sin(x1 - x2 - math.pi / 8)
    return -raw, con


def new_branin(x):
    """Negated New Branin objective (as stated, a min of a negative paraboloid) and constraint."""
    x1, x2 = _check(x, NEW_BRANIN_DOMAIN)
    raw = -(x1 - 10) ** 2 - (x2 - 15) ** 2
    con = ((x2 - 5.1 / (4 * math.pi ** 2) * x1 ** 2 + 5 / math.pi * x1 - 6) ** 2
           + 10 * (1 - 1 / (8 * math.pi)) * np.cos(x1) + 5)
    return -raw, con


def test_function_2(x):
    """Negated Test Function 2 objective and its three constraints (stacked on the last axis)."""
    x1, x2 = _check(x, TEST_FUNCTION_2_DOMAIN)
    raw = -(x1 - 1) ** 2 - (x2 - 0.5) ** 2
    cons = np.stack([
        (x1 - 3) ** 2 + (x2 + 2) ** 2 - 12,
        10 * x1 + x2 - 7,
        (x1 - 0.5) ** 2 + (x2 - 0.5) ** 2 - 0.2,
    ], axis=-1)
    return -raw, cons


@dataclass
class ProblemSpec:
    """A black-box objective (maximised) with ``K`` constraints ``c_k(x) <= 0``.

    ``evaluate`` maps ``(..., d)`` inputs to ``(objective, constraints)`` with
    constraints shaped ``(..., K)``.
    """

    name: str
    domain: BoxDomain
    evaluate: Callable
    n_constraints: int
    noise_std: float = 0.0
    penalty_M: float = 0.0
    true_opt_value: Optional[float] = None
    true_opt_point: Optional[np.ndarray] = None
    source_sense: str = "min"

    def objective_fn(self, x):
        return self.evaluate(x)[0]

    def constraint_values(self, x) -> np.ndarray:
        c = np.asarray(self.evaluate(x)[1], dtype=float)
        x = np.asarray(x, dtype=float)
        return c.reshape(x.shape[:-1] + (self.n_constraints,))

    @property
    def constraint_fns(self) -> List[Callable]:
        return [lambda x, k=k: self.constraint_values(x)[..., k] for k in range(self.n_constraints)]

    def is_feasible(self, x):
        return np.all(self.constraint_values(x) <= 0, axis=-1)


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    y: float
    c: np.ndarray


def observe(spec: ProblemSpec, x, rng_seed=None) -> Observation:
    """Noisy objective, exact constraints."""
    x = np.asarray(x, dtype=float).ravel()
    f = float(spec.objective_fn(x))
    y = f + spec.noise_std * float(as_rng(rng_seed).standard_normal()) if spec.noise_std > 0 else f
    return Observation(x.copy(), y, spec.constraint_values(x).ravel().copy())


def opportunity_cost(spec: ProblemSpec, x_r) -> float:
    if spec.true_opt_value is None:
        raise ValueError("problem has no true optimum; run brute_force_optimum first")
    x_r = np.asarray(x_r, dtype=float).ravel()
    if bool(spec.is_feasible(x_r)):
        return float(spec.true_opt_value - spec.objective_fn(x_r))
    return float(spec.true_opt_value - spec.penalty_M)


def _grid_scan(spec: ProblemSpec, grid_size: int, top: int = 8):
    """Best feasible grid points (values, points)."""
    lo, hi = spec.domain.lower, spec.domain.upper
    axes = [np.linspace(lo[i], hi[i], grid_size) for i in range(spec.domain.dim)]
    if spec.domain.dim != 2:
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.domain.dim)
        chunks = [mesh]
    else:
        chunks = (np.column_stack([np.full(grid_size, a), axes[1]]) for a in axes[0])
    best_vals, best_pts = [], []
    for X in chunks:
        f, _ = spec.evaluate(X)
        f = np.asarray(f, dtype=float)
        feas = spec.is_feasible(X)
        if feas.any():
            fv = np.where(feas, f, -np.inf)
            idx = np.argsort(-fv)[:top]
            idx = idx[np.isfinite(fv[idx])]
            best_vals.extend(fv[idx])
            best_pts.extend(X[idx])
    if not best_vals:
        raise ValueError(f"no feasible grid point found for {spec.name}")
    order = np.argsort(-np.asarray(best_vals))[:top]
    return np.asarray(best_vals)[order], np.asarray(best_pts)[order]


def _refine(spec: ProblemSpec, x0):
    """Constrained local ascent from a feasible point; result stays feasible."""
    dom = spec.domain

    def neg(u):
        return -float(spec.objective_fn(dom.from_unit(u)))

    cons = [{"type": "ineq", "fun": lambda u: -spec.constraint_values(dom.from_unit(u)).ravel()}]
    u0 = dom.to_unit(x0)
    try:
        res = minimize(neg, u0, method="SLSQP", bounds=[(0.0, 1.0)] * dom.dim,
                       constraints=cons, options={"ftol": 1e-14, "maxiter": 500})
        u1 = np.clip(res.x, 0.0, 1.0)
    except (ValueError, np.linalg.LinAlgError):
        return x0
    x1 = dom.from_unit(u1)
    if not spec.is_feasible(x1):
        # pull back along the segment to the feasible start
        a, b = 0.0, 1.0
        for _ in range(60):
            t = 0.5 * (a + b)
            if spec.is_feasible(x0 + t * (x1 - x0)):
                a = t
            else:
                b = t
        x1 = x0 + a * (x1 - x0)
    return x1 if spec.objective_fn(x1) >= spec.objective_fn(x0) else x0


def brute_force_optimum(spec: ProblemSpec, grid_size: int = 2000) -> Tuple[np.ndarray, float]:
    """Dense-grid feasible maximum, polished by a feasibility-preserving local search."""
    vals, pts = _grid_scan(spec, grid_size)
    best_x, best_f = pts[0], float(vals[0])
    for x0 in pts:
        x1 = _refine(spec, x0)
        f1 = float(spec.objective_fn(x1))
        if f1 > best_f and spec.is_feasible(x1):
            best_x, best_f = x1, f1
    return np.asarray(best_x, dtype=float), best_f


_FACTORIES = {
    "mystery": (MYSTERY_DOMAIN, mystery, 1),
    "new-branin": (NEW_BRANIN_DOMAIN, new_branin, 1),
    "test-function-2": (TEST_FUNCTION_2_DOMAIN, test_function_2, 3),
}


def list_problems() -> List[str]:
    return list(_FACTORIES)


@lru_cache(maxsize=None)
def _solved(name: str, grid_size: int):
    domain, fn, K = _FACTORIES[name]
    spec = ProblemSpec(name, domain, fn, K)
    return brute_force_optimum(spec, grid_size)


def get_problem(name: str, noise_std: float = 0.0, grid_size: int = 2000,
                penalty_M: float = 0.0) -> ProblemSpec:
    """Registry lookup; the brute-forced optimum is computed once per process."""
    if name not in _FACTORIES:
        raise KeyError(f"unknown problem {name!r}; choose from {list_problems()}")
    domain, fn, K = _FACTORIES[name]
    x_star, f_star = _solved(name, grid_size)
    return ProblemSpec(name, domain, fn, K, noise_std=noise_std, penalty_M=penalty_M,
                       true_opt_value=f_star, true_opt_point=x_star.copy())
