"""Gaussian-process regression with a squared-exponential kernel.

Inputs are mapped to the unit cube of a :class:`BoxDomain` before the kernel
is applied, so lengthscales live in scaled space. Outputs are stored in
"model units": ``(y - output_offset) / output_scale``. Every posterior query
returns model units.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .design import BoxDomain, as_rng

logger = logging.getLogger(__name__)

JITTER_START = 1e-8
JITTER_MAX = 1e-4


class NumericalError(RuntimeError):
    """Raised when a covariance matrix cannot be factorised."""


@dataclass(frozen=True)
class KernelParams:
    lengthscales: np.ndarray
    signal_variance: float = 1.0
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int:
        return self.lengthscales.size


def se_kernel(A, B, lengthscales, signal_variance):
    """Squared-exponential Gram matrix between row sets ``A`` and ``B``."""
    A = np.atleast_2d(A) / lengthscales
    B = np.atleast_2d(B) / lengthscales
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    return signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0))


def kernel_eval(params: KernelParams, a, b) -> float:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != (params.dim,) or b.shape != (params.dim,):
        raise ValueError(f"expected vectors of length {params.dim}")
    r = (a - b) / params.lengthscales
    return float(params.signal_variance * np.exp(-0.5 * np.dot(r, r)))


def jittered_cholesky(K, scale):
    """Cholesky factor of ``K + j I`` with ``j`` escalated from 1e-8 to 1e-4 times ``scale``."""
    n = K.shape[0]
    j = JITTER_START * scale
    while j <= JITTER_MAX * scale * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + j * np.eye(n)), j
        except np.linalg.LinAlgError:
            j *= 10.0
    raise NumericalError("covariance matrix not positive definite after maximum jitter")


@dataclass
class QueryCache:
    """Posterior quantities at a fixed set of query points."""

    U: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    V: np.ndarray  # L^{-1} k(X, Xq)


@dataclass
class PendingSample:
    """Per-model solve for a pending sample location, reusable across queries."""

    u: np.ndarray
    v: np.ndarray  # L^{-1} k(X, x_new)
    knn: float


class GpModel:
    """Exact GP posterior, immutable after construction.

    ``y`` is given in model units. ``domain`` defaults to the identity map
    (unit cube of matching dimension is *not* assumed).
    """

    def __init__(self, params: KernelParams, X, y, domain: BoxDomain | None = None,
                 prior_mean: float = 0.0, output_offset: float = 0.0,
                 output_scale: float = 1.0):
        X = np.asarray(X, dtype=float).reshape(-1, params.dim)
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(X) != len(y):
            raise ValueError("inputs and outputs must have equal length")
        if not np.all(np.isfinite(y)):
            raise ValueError("outputs must be finite")
        self.params = params
        self.domain = domain
        self.X = X
        self.y = y
        self.prior_mean = float(prior_mean)
        self.output_offset = float(output_offset)
        self.output_scale = float(output_scale)
        self.U = self._scale(X)
        n = len(X)
        if n:
            K = se_kernel(self.U, self.U, params.lengthscales, params.signal_variance)
            K[np.diag_indices(n)] += params.noise_variance
            self.L, self.jitter = jittered_cholesky(K, params.signal_variance)
            self.alpha = cho_solve((self.L, True), y - self.prior_mean)
        else:
            self.L = np.zeros((0, 0))
            self.jitter = 0.0
            self.alpha = np.zeros(0)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def noise(self) -> float:
        """Effective observation noise: learned/fixed noise plus jitter."""
        return self.params.noise_variance + self.jitter

    def _scale(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim}-dimensional inputs")
        X = X.reshape(-1, self.dim)
        return self.domain.to_unit(X) if self.domain is not None else X

    def _k(self, UA, UB):
        return se_kernel(UA, UB, self.params.lengthscales, self.params.signal_variance)

    def to_original(self, value):
        return self.output_offset + self.output_scale * np.asarray(value)

    def to_model(self, value):
        return (np.asarray(value) - self.output_offset) / self.output_scale

    # -- posterior queries -------------------------------------------------

    def cache(self, Xq) -> QueryCache:
        U = self._scale(Xq)
        if self.n == 0:
            m = len(U)
            return QueryCache(U, np.full(m, self.prior_mean),
                              np.full(m, self.params.signal_variance), np.zeros((0, m)))
        Ks = self._k(self.U, U)
        V = solve_triangular(self.L, Ks, lower=True)
        mean = self.prior_mean + Ks.T @ self.alpha
        var = np.maximum(self.params.signal_variance - np.sum(V * V, axis=0), 0.0)
        return QueryCache(U, mean, var, V)

    def mean(self, Xq) -> np.ndarray:
        U = self._scale(Xq)
        if self.n == 0:
            return np.full(len(U), self.prior_mean)
        return self.prior_mean + self._k(U, self.U) @ self.alpha

    def mean_var(self, Xq):
        c = self.cache(Xq)
        return c.mean, c.var

    def var(self, Xq) -> np.ndarray:
        return self.cache(Xq).var

    def cov(self, XA, XB) -> np.ndarray:
        UA, UB = self._scale(XA), self._scale(XB)
        K = self._k(UA, UB)
        if self.n:
            VA = solve_triangular(self.L, self._k(self.U, UA), lower=True)
            VB = solve_triangular(self.L, self._k(self.U, UB), lower=True)
            K = K - VA.T @ VB
        return K

    def pending(self, x_new) -> PendingSample:
        u = self._scale(x_new)
        knn = self.params.signal_variance
        v = np.zeros(0)
        if self.n:
            v = solve_triangular(self.L, self._k(self.U, u)[:, 0], lower=True)
            knn = knn - v @ v
        return PendingSample(u, v, max(knn, 0.0))

    def cross(self, cache: QueryCache, x_new):
        """``k^n(Xq, x_new)`` for the cached points and ``k^n(x_new, x_new)``.

        ``x_new`` may be a :class:`PendingSample` from :meth:`pending`.
        """
        p = x_new if isinstance(x_new, PendingSample) else self.pending(x_new)
        kq = self._k(cache.U, p.u)[:, 0]
        if self.n:
            kq = kq - cache.V.T @ p.v
        return kq, p.knn

    def sigma_tilde_cached(self, cache: QueryCache, x_new) -> np.ndarray:
        kq, knn = self.cross(cache, x_new)
        denom = knn + self.noise
        if denom <= 0:
            raise NumericalError("zero predictive variance at the pending sample")
        return kq / np.sqrt(denom)

    def sigma_tilde_many(self, Xq, x_new) -> np.ndarray:
        return self.sigma_tilde_cached(self.cache(Xq), x_new)

    def conditioned(self, x_new, y_new) -> "GpModel":
        """Same hyperparameters, one extra observation (given in model units)."""
        X = np.vstack([self.X, np.asarray(x_new, dtype=float).reshape(1, -1)])
        y = np.append(self.y, float(y_new))
        return GpModel(self.params, X, y, self.domain, self.prior_mean,
                       self.output_offset, self.output_scale)

    def sample_joint(self, Xq, rng, size: int = 1, eig_floor: float = 0.0):
        """Joint posterior draws at ``Xq``; returns ``(size, m)``.

        Eigenvalues below ``eig_floor * signal_variance`` are treated as zero.
        """
        mean = self.mean(Xq)
        C = self.cov(Xq, Xq)
        C = 0.5 * (C + C.T)
        w, Q = np.linalg.eigh(C)
        w = np.where(w > eig_floor * self.params.signal_variance, w, 0.0)
        root = Q * np.sqrt(w)
        z = rng.standard_normal((size, len(mean)))
        return mean + z @ root.T


# -- scalar-style operations -----------------------------------------------

def posterior_mean(model: GpModel, x) -> float:
    return float(model.mean(np.atleast_2d(x))[0])


def posterior_cov(model: GpModel, x, x2) -> float:
    value = float(model.cov(np.atleast_2d(x), np.atleast_2d(x2))[0, 0])
    if np.array_equal(np.asarray(x, dtype=float), np.asarray(x2, dtype=float)):
        value = max(value, 0.0)
    return value


def sigma_tilde(model: GpModel, x, x_new) -> float:
    """Standard deviation of the next-step posterior mean at ``x`` given a sample at ``x_new``."""
    return float(model.sigma_tilde_many(np.atleast_2d(x), x_new)[0])


def fantasy_posterior(model: GpModel, x, x_new, z: float):
    """Mean and variance at ``x`` after a fantasised observation at ``x_new``."""
    c = model.cache(np.atleast_2d(x))
    st = model.sigma_tilde_cached(c, x_new)[0]
    return float(c.mean[0] + st * z), float(max(c.var[0] - st * st, 0.0))


# -- hyperparameter fitting -------------------------------------------------

@dataclass
class FitConfig:
    """Maximum-likelihood settings.

    ``noise_variance=None`` learns the noise; a number fixes it (model units).
    ``offset`` picks the output shift: ``"mean"`` (standardise), ``"min"``
    (smallest observation maps to 0) or ``"zero"`` (scale only, which keeps
    a zero threshold in place). The prior mean always sits at the sample mean.
    """

    noise_variance: Optional[float] = None
    n_starts: int = 8
    lengthscale_bounds: tuple = (1e-3, 10.0)
    signal_variance_bounds: tuple = (1e-3, 1e3)
    noise_bounds: tuple = (1e-8, 10.0)
    offset: str = "mean"
    max_iter: int = 200

    def __post_init__(self):
        if self.offset not in ("mean", "min", "zero"):
            raise ValueError(f"unknown offset {self.offset!r}")


def log_marginal_likelihood(theta, U, t, fixed_noise=None, eval_gradient=True):
    """Log evidence of zero-mean targets ``t`` for log-parameters ``theta``.

    ``theta = [log lengthscales..., log signal_variance, (log noise)]``.
    """
    d = U.shape[1]
    ls = np.exp(theta[:d])
    sv = np.exp(theta[d])
    noise = np.exp(theta[d + 1]) if fixed_noise is None else fixed_noise
    n = len(t)
    Kf = se_kernel(U, U, ls, sv)
    K = Kf + noise * np.eye(n)
    L, _ = jittered_cholesky(K, sv)
    alpha = cho_solve((L, True), t)
    lml = -0.5 * t @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    if not eval_gradient:
        return lml
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    grad = np.empty_like(theta)
    for i in range(d):
        D = (U[:, i][:, None] - U[:, i][None, :]) ** 2 / ls[i] ** 2
        grad[i] = 0.5 * np.sum(W * (Kf * D))
    grad[d] = 0.5 * np.sum(W * Kf)
    if fixed_noise is None:
        grad[d + 1] = 0.5 * noise * np.trace(W)
    return lml, grad


def gp_fit(X, y, domain: BoxDomain, config: FitConfig | None = None, rng_seed=0,
           warm_start: KernelParams | None = None) -> GpModel:
    """Fit kernel hyperparameters by multistart bounded maximum likelihood."""
    from scipy.stats import qmc

    config = config or FitConfig()
    X = np.asarray(X, dtype=float).reshape(-1, domain.dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) < 1:
        raise ValueError("need at least one observation")
    if not np.all(np.isfinite(y)):
        raise ValueError("outputs must be finite")
    ybar = float(np.mean(y))
    scale = float(np.std(y))
    if not np.isfinite(scale) or scale < 1e-12:
        scale = 1.0
    offset = {"mean": ybar, "min": float(np.min(y)), "zero": 0.0}[config.offset]
    prior_mean = (ybar - offset) / scale
    targets = (y - offset) / scale
    t = targets - prior_mean
    U = domain.to_unit(X)
    d = domain.dim

    learn_noise = config.noise_variance is None
    bounds = [tuple(np.log(config.lengthscale_bounds))] * d
    bounds.append(tuple(np.log(config.signal_variance_bounds)))
    if learn_noise:
        bounds.append(tuple(np.log(config.noise_bounds)))
    bounds = np.array(bounds)

    rng = as_rng(rng_seed)
    starts = qmc.scale(qmc.LatinHypercube(d=len(bounds), seed=rng).random(config.n_starts),
                       bounds[:, 0], bounds[:, 1])
    if warm_start is not None:
        w = list(np.log(warm_start.lengthscales)) + [np.log(warm_start.signal_variance)]
        if learn_noise:
            w.append(np.log(max(warm_start.noise_variance, config.noise_bounds[0])))
        starts = np.vstack([np.clip(w, bounds[:, 0], bounds[:, 1]), starts])

    def neg(theta):
        try:
            lml, g = log_marginal_likelihood(theta, U, t, config.noise_variance)
        except NumericalError:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(theta)
        return -lml, -g

    best_theta, best_val = None, np.inf
    for s in starts:
        try:
            res = minimize(neg, s, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": config.max_iter})
        except (ValueError, np.linalg.LinAlgError):
            continue
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = np.clip(res.x, bounds[:, 0], bounds[:, 1]), res.fun
    if best_theta is None or best_val >= 1e25:
        raise NumericalError("hyperparameter fit failed at every start")

    noise = float(np.exp(best_theta[d + 1])) if learn_noise else float(config.noise_variance)
    params = KernelParams(np.exp(best_theta[:d]), float(np.exp(best_theta[d])), noise)
    return GpModel(params, X, targets, domain, prior_mean, offset, scale)


def with_params(model: GpModel, **changes) -> GpModel:
    """Rebuild ``model`` with some kernel parameters replaced."""
    params = replace(model.params, **changes)
    return GpModel(params, model.X, model.y, model.domain, model.prior_mean,
                   model.output_offset, model.output_scale)
