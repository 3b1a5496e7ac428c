import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid
from scipy.optimize import brentq
from scipy.stats import norm

from ckgopt.baselines import (BaselineChoice, NoisyEI, PenalisedKG, best_feasible, cei_many,
                              cei_value, cts_next, cts_select, expected_improvement, nei_value,
                              observed_incumbent, pkg_value)
from ckgopt.ckg import CkgConfig, Discretization, build_discretization
from ckgopt.design import BoxDomain, as_rng, lhs_sample
from ckgopt.feasibility import pf_current
from ckgopt.gp import GpModel, KernelParams

from conftest import random_model
from oracles import dense_posterior, mc_max_of_lines, standard_kg, stratified_normals


def prior(mean=0.0, var=1.0, d=1):
    return GpModel(KernelParams(np.full(d, 0.3), var), np.zeros((0, d)), np.zeros(0),
                   prior_mean=mean)


# -- EI ------------------------------------------------------------------------

def test_ei_at_incumbent():
    assert expected_improvement(1.5, 1.0, 1.5) == pytest.approx(norm.pdf(0), abs=1e-12)


def test_ei_no_spread():
    assert expected_improvement(0.5, 0.0, 1.0) == 0.0
    assert expected_improvement(4.0, 0.0, 1.0) == 3.0
    assert expected_improvement(4.0, 1e-13, 1.0) == pytest.approx(3.0)


def test_ei_rejects_negative_std():
    with pytest.raises(ValueError):
        expected_improvement(0.0, -1.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(m=st.floats(-5, 5), s=st.floats(1e-3, 5), inc=st.floats(-5, 5))
def test_ei_properties(m, s, inc):
    ei = expected_improvement(m, s, inc)
    assert ei >= max(m - inc, 0.0) - 1e-12
    assert expected_improvement(m, s * 1.5, inc) >= ei - 1e-12


def test_ei_matches_quadrature():
    z = np.linspace(-12, 12, 200_001)
    m, s, inc = 0.3, 0.7, 0.5
    integrand = np.maximum(m + s * z - inc, 0) * norm.pdf(z)
    assert expected_improvement(m, s, inc) == pytest.approx(trapezoid(integrand, z), abs=1e-9)


# -- cEI -----------------------------------------------------------------------

def test_cei_cases():
    obj = prior(0.0)
    assert cei_value(obj, [prior(50.0)], [0.5], 0.0) == 0.0
    assert cei_value(obj, [], [0.5], -0.2) == pytest.approx(expected_improvement(0.0, 1.0, -0.2))
    # EI of 0.4 times PF of 0.25
    a = brentq(lambda t: expected_improvement(t, 1.0, 0.0) - 0.4, -3, 3)
    val = cei_value(prior(a), [prior(0.0), prior(0.0)], [0.5], 0.0)
    assert val == pytest.approx(0.1, abs=1e-12)


def test_cei_without_incumbent_is_pf():
    ens = [prior(-0.5)]
    assert cei_value(prior(0.0), ens, [0.3], -np.inf) == pytest.approx(pf_current(ens, [0.3]))


def test_best_feasible():
    y = np.array([3.0, 5.0, 4.0])
    C = np.array([[-1.0], [0.5], [0.0]])
    assert best_feasible(y, C) == 4.0
    assert best_feasible(y, np.ones((3, 1))) == -np.inf
    assert best_feasible(y, None) == 5.0


def test_observed_incumbent_uses_constraint_data():
    dom = BoxDomain.unit(1)
    p = KernelParams(np.array([0.3]), 1.0, 1e-6)
    X = [[0.1], [0.5], [0.9]]
    obj = GpModel(p, X, [1.0, 3.0, 2.0], dom)
    con = GpModel(p, X, [-1.0, 1.0, -0.1], dom)
    assert observed_incumbent(obj, [con]) == 2.0


# -- NEI -----------------------------------------------------------------------

def deterministic_pair(seed):
    r = np.random.default_rng(seed)
    dom = BoxDomain.unit(2)
    X = lhs_sample(dom, 8, seed)
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    c = X[:, 0] - X[:, 1]
    p = KernelParams(np.array([0.3, 0.3]), 1.0, 0.0)
    obj = GpModel(p, X, y, dom, prior_mean=y.mean())
    con = GpModel(p, X, c, dom, prior_mean=c.mean())
    return obj, con, r


@pytest.mark.parametrize("seed", range(3))
def test_nei_reduces_to_cei(seed):
    obj, con, r = deterministic_pair(seed)
    inc = observed_incumbent(obj, [con])
    for x in r.random((5, 2)):
        assert abs(nei_value(obj, [con], x, 16, seed) - cei_value(obj, [con], x, inc)) <= 1e-6


def test_nei_reproducible():
    r = np.random.default_rng(0)
    obj, con = random_model(r, d=1), random_model(r, d=1)
    assert nei_value(obj, [con], [0.4], 1, 7) == nei_value(obj, [con], [0.4], 1, 7)


def test_nei_noisy_matches_high_sample_oracle():
    dom = BoxDomain.unit(1)
    r = np.random.default_rng(4)
    X = np.linspace(0.05, 0.95, 7)[:, None]
    y = np.sin(5 * X[:, 0]) + 0.3 * r.standard_normal(7)
    obj = GpModel(KernelParams(np.array([0.25]), 1.0, 0.09), X, y, dom, prior_mean=y.mean())
    c = 0.6 - X[:, 0]
    con = GpModel(KernelParams(np.array([0.3]), 0.5, 1e-6), X, c, dom, prior_mean=c.mean())
    x = np.array([0.55])
    got = nei_value(obj, [con], x, 4096, 0)
    # oracle: 10^5 joint draws from the dense posterior at the data
    S = 100_000
    mf, Cf = dense_posterior(obj, X)
    fs = r.multivariate_normal(mf, Cf, size=S, method="eigh")
    cs = np.tile(con.mean(X), (S, 1))  # constraint posterior at data is resolved
    feas = cs <= 0
    inc = np.where(feas, fs, -np.inf).max(axis=1)
    mq, vq = obj.mean_var(x[None, :])
    ei = expected_improvement(np.full(S, mq[0]), np.full(S, np.sqrt(vq[0])), 0.0 * inc + inc)
    oracle = np.mean(ei) * pf_current([con], x)
    assert got == pytest.approx(oracle, rel=0.05)


def test_nei_requires_data():
    with pytest.raises(ValueError):
        NoisyEI(prior(), [], 4)


# -- pKG -----------------------------------------------------------------------

FAST = CkgConfig(n_y=5, mc_samples_nc=4, candidate_count=8, top_subset=2)


def test_pkg_infeasible_is_zero():
    r = np.random.default_rng(0)
    obj = random_model(r, d=1)
    assert pkg_value(obj, [prior(60.0)], [0.5], rng_seed=0, config=FAST) == 0.0


def test_pkg_unconstrained_is_standard_kg():
    r = np.random.default_rng(1)
    obj = random_model(r, d=2)
    x_new = r.random(2)
    acq = PenalisedKG(obj, [], obj.domain, FAST)
    disc = acq.build_discretization(x_new)
    assert pkg_value(obj, [], x_new, disc, config=FAST) == pytest.approx(
        standard_kg(obj, disc.points, x_new, disc.points[0]), abs=1e-10)


def test_pkg_kg_factor_matches_mc():
    r = np.random.default_rng(5)
    obj = random_model(r, d=1, noise=0.01)
    con = GpModel(KernelParams(np.array([0.2]), 1.0, 1e-4), [[0.2], [0.6]], [-0.3, 0.4],
                  obj.domain)
    x_new = np.array([0.37])
    acq = PenalisedKG(obj, [con], obj.domain, FAST)
    disc = acq.build_discretization(x_new)
    pf = pf_current([con], x_new)
    assert pf > 0.01
    factor = pkg_value(obj, [con], x_new, disc, config=FAST) / pf
    mean = obj.mean(disc.points)
    st_ = obj.sigma_tilde_many(disc.points, x_new)
    Z = stratified_normals(1_000_000, r)
    assert abs(factor - (mc_max_of_lines(mean, st_, Z) - mean[0])) <= 3e-3


def test_pkg_prepends_recommendation():
    r = np.random.default_rng(2)
    obj = random_model(r, d=1)
    disc = Discretization(np.array([[0.1], [0.9]]))
    v = pkg_value(obj, [], [0.5], disc, config=FAST)
    x_r = PenalisedKG(obj, [], obj.domain, FAST).x_r
    assert v == pytest.approx(standard_kg(obj, np.vstack([x_r, disc.points]), [0.5], x_r),
                              abs=1e-10)


# -- cTS -----------------------------------------------------------------------

def test_cts_select_feasible_branch():
    f = np.array([1.0, 5.0, 3.0])
    assert cts_select(f, -np.ones((3, 2))) == 1
    assert cts_select(f, np.array([[-1.0], [1.0], [-1.0]])) == 2
    assert cts_select(f, None) == 1


def test_cts_select_violation_branch():
    f = np.array([1.0, 5.0, 3.0])
    C = np.array([[2.0, 0.5], [1.0, 0.2], [0.1, 3.0]])
    assert cts_select(f, C) == 1


def test_cts_degenerate_posterior_enumeration():
    dom = BoxDomain.unit(1)
    X = np.linspace(0, 1, 30)[:, None]
    f = lambda x: x  # noqa: E731
    c = lambda x: x - 0.6  # noqa: E731
    p = KernelParams(np.array([3.0]), 1.0, 1e-6)
    obj = GpModel(p, X, f(X[:, 0]), dom, prior_mean=0.5)
    con = GpModel(p, X, c(X[:, 0]), dom, prior_mean=0.5)
    seed = 11
    x = cts_next(obj, [con], dom, 5, seed)
    cands = lhs_sample(dom, 5, as_rng(seed))[:, 0]
    feas = c(cands) <= 0
    expect = cands[feas][np.argmax(f(cands[feas]))]
    assert x[0] == pytest.approx(expect, abs=1e-12)


def test_cts_in_domain_and_seeded():
    r = np.random.default_rng(3)
    dom = BoxDomain([-1.0, 0.0], [1.0, 4.0])
    obj, con = random_model(r, d=2, domain=dom), random_model(r, d=2, domain=dom)
    a = cts_next(obj, [con], dom, 50, 4)
    assert dom.contains(a)
    np.testing.assert_array_equal(a, cts_next(obj, [con], dom, 50, 4))
    with pytest.raises(ValueError):
        cts_next(obj, [con], dom, 0, 4)


def test_baseline_choice():
    assert BaselineChoice("cEI").kind.value == "cEI"
    with pytest.raises(ValueError):
        BaselineChoice("UCB")
    with pytest.raises(ValueError):
        BaselineChoice("NEI", nei_samples=0)


def test_cei_many_vectorised():
    r = np.random.default_rng(8)
    obj, con = random_model(r, d=2), random_model(r, d=2)
    Q = r.random((6, 2))
    np.testing.assert_allclose(cei_many(obj, [con], Q, 0.3),
                               [cei_value(obj, [con], q, 0.3) for q in Q], rtol=1e-12, atol=1e-15)
