import inspect
import math

import mpmath
import numpy as np
import pytest
from scipy import integrate, stats

from ngshrink.model import (
    ChainState,
    Dataset,
    Hyperparams,
    ImproperConditionalError,
    TauVector,
    cond_beta,
    cond_sigma2_given_beta_tau,
    cond_sigma2_given_tau,
    cond_tau,
    log_cond_tau_density,
    log_joint,
    precision_factor,
)
from ngshrink.rand_dists import GigParams, NotPositiveDefiniteError


def mp_log_joint(beta, sigma2, tau, X, Y, hp):
    """Term-by-term evaluation of the joint log posterior kernel in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    n, p = X.shape
    s2 = mpmath.mpf(sigma2)
    r = [mpmath.mpf(Y[i]) - mpmath.fsum(mpmath.mpf(X[i, j]) * mpmath.mpf(beta[j]) for j in range(p))
         for i in range(n)]
    total = -mpmath.fsum(v * v for v in r) / (2 * s2) - n * mpmath.log(2 * mpmath.pi * s2) / 2
    total += -mpmath.fsum(mpmath.mpf(beta[j]) ** 2 / mpmath.mpf(tau[j]) for j in range(p)) / (2 * s2)
    total += -p * mpmath.log(2 * mpmath.pi * s2) / 2
    total += mpmath.fsum((mpmath.mpf(hp.a) - mpmath.mpf(1.5)) * mpmath.log(tau[j]) - hp.b * mpmath.mpf(tau[j])
                         for j in range(p))
    total += -(hp.alpha + 1) * mpmath.log(s2) - hp.xi / s2
    return float(total)


def random_instance(seed, n=4, p=3):
    r = np.random.default_rng(seed)
    data = Dataset(r.standard_normal((n, p)), r.standard_normal(n))
    tau = r.gamma(2.0, 1.0, p)
    state = ChainState(r.standard_normal(p), float(r.gamma(2.0, 1.0)))
    return data, tau, state


# ---------------------------------------------------------------- types


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(a=0.0, b=1.0)
    with pytest.raises(ValueError):
        Hyperparams(a=1.0, b=-1.0)
    with pytest.raises(ValueError):
        Hyperparams(a=1.0, b=1.0, alpha=-0.1)
    with pytest.raises(ValueError):
        Hyperparams(a=1.0, b=1.0, xi=math.nan)
    assert Hyperparams(a=1.0, b=1.0, xi=0.0).pxda_allowed is False
    assert Hyperparams(a=1.0, b=1.0, xi=1.0).pxda_allowed is True
    assert Hyperparams(a=0.75, b=2.0).tau_order == 0.25


def test_dataset_caches_and_validation():
    data, _, _ = random_instance(1, 6, 3)
    assert np.allclose(data.gram, data.X.T @ data.X)
    assert np.array_equal(data.gram, data.gram.T)
    assert np.allclose(data.xty, data.X.T @ data.Y)
    assert data.yty == pytest.approx(data.Y @ data.Y)
    assert data.lambda_max == pytest.approx(np.linalg.norm(data.gram, 2), abs=1e-8)
    assert (data.n, data.p) == (6, 3)
    with pytest.raises(ValueError):
        data.X[0, 0] = 1.0
    with pytest.raises(ValueError):
        Dataset(np.array([[1.0, np.nan]]), np.ones(1))
    with pytest.raises(ValueError):
        Dataset(np.ones((3, 2)), np.ones(2))
    assert Dataset(np.ones(3), np.ones(3)).p == 1


def test_state_and_tau_validation():
    with pytest.raises(ValueError):
        ChainState(np.ones(2), 0.0)
    with pytest.raises(ValueError):
        ChainState(np.array([1.0, np.inf]), 1.0)
    with pytest.raises(ValueError, match=r"tau\[1\]"):
        TauVector(np.array([1.0, 0.0]))


# ---------------------------------------------------------------- log_joint


@pytest.mark.parametrize("seed", range(5))
def test_log_joint_matches_high_precision(seed):
    data, tau, state = random_instance(seed)
    hp = Hyperparams(a=0.75, b=2.0, alpha=1.0, xi=1.5)
    ref = mp_log_joint(state.beta, state.sigma2, tau, data.X, data.Y, hp)
    assert log_joint(state, TauVector(tau), data, hp) == pytest.approx(ref, abs=1e-10)


def test_log_joint_xi_term():
    data, tau, state = random_instance(3)
    hp1 = Hyperparams(a=0.75, b=2.0, alpha=1.0, xi=1.5)
    hp2 = Hyperparams(a=0.75, b=2.0, alpha=1.0, xi=3.0)
    diff = log_joint(state, tau, data, hp2) - log_joint(state, tau, data, hp1)
    assert diff == pytest.approx(-1.5 / state.sigma2, abs=1e-12)


def test_log_joint_zero_design():
    r = np.random.default_rng(0)
    data = Dataset(np.zeros((3, 2)), r.standard_normal(3))
    hp = Hyperparams(a=1.0, b=1.0, alpha=1.0, xi=1.0)
    tau = np.array([0.5, 2.0])
    b1, b2 = np.array([0.3, -1.0]), np.array([2.0, 0.1])
    d = log_joint(ChainState(b1, 1.7), tau, data, hp) - log_joint(ChainState(b2, 1.7), tau, data, hp)
    prior = lambda b: -np.sum(b**2 / tau) / (2 * 1.7)
    assert d == pytest.approx(prior(b1) - prior(b2), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_conditional_is_slice_of_joint(seed):
    data, tau, state = random_instance(seed)
    hp = Hyperparams(a=0.75, b=2.0, alpha=1.0, xi=1.0)
    factor, s2 = cond_beta(tau, state.sigma2, data)
    b2 = state.beta + 0.5
    lhs = log_joint(state, tau, data, hp) - log_joint(ChainState(b2, s2), tau, data, hp)
    cov = s2 * np.linalg.inv(data.gram + np.diag(1 / tau))
    mvn = stats.multivariate_normal(np.linalg.solve(data.gram + np.diag(1 / tau), data.xty), cov)
    assert lhs == pytest.approx(mvn.logpdf(state.beta) - mvn.logpdf(b2), abs=1e-8)


# ---------------------------------------------------------------- beta


def test_cond_beta_identity_design():
    Y = np.array([1.0, -2.0, 0.5])
    data = Dataset(np.eye(3), Y)
    factor, s2 = cond_beta(np.ones(3), 0.8, data)
    assert np.allclose(factor.mean, Y / 2)
    assert np.allclose(s2 * np.linalg.inv(factor.precision), 0.4 * np.eye(3))


def test_cond_beta_flat_prior_limit():
    r = np.random.default_rng(4)
    X, Y = r.standard_normal((8, 3)), r.standard_normal(8)
    factor, _ = cond_beta(np.full(3, 1e12), 1.0, Dataset(X, Y))
    assert np.allclose(factor.mean, np.linalg.lstsq(X, Y, rcond=None)[0], atol=1e-9)


def test_cond_beta_scalar():
    factor, s2 = cond_beta(np.ones(1), 1.0, Dataset(np.array([[1.0], [1.0]]), np.array([1.0, 3.0])))
    assert factor.mean[0] == pytest.approx(4.0 / 3.0, abs=1e-14)
    assert s2 / factor.precision[0, 0] == pytest.approx(1.0 / 3.0, abs=1e-14)


def test_precision_factor_reports_index():
    data, _, _ = random_instance(0)
    with pytest.raises(NotPositiveDefiniteError, match=r"tau\[2\]"):
        precision_factor(np.array([1.0, 1.0, 0.0]), data)
    with pytest.raises(NotPositiveDefiniteError, match=r"tau\[1\]"):
        precision_factor(np.array([1.0, 1e-320, 1.0]), data)


# ---------------------------------------------------------------- sigma2


def test_sigma2_given_beta_tau_examples():
    data, tau, _ = random_instance(2)
    hp = Hyperparams(a=1.0, b=1.0, alpha=0.0, xi=0.0)
    ig = cond_sigma2_given_beta_tau(np.zeros(3), tau, data, hp)
    assert ig.shape == (data.n + 3) / 2 and ig.rate == pytest.approx(data.yty / 2)
    one = Dataset(np.ones((1, 1)), np.array([2.0]))
    ig = cond_sigma2_given_beta_tau(np.array([1.0]), np.ones(1), one, Hyperparams(a=1.0, b=1.0, alpha=0.0, xi=1.0))
    assert (ig.shape, ig.rate) == (1.0, 2.0)


def test_sigma2_given_beta_tau_homogeneity():
    data, tau, state = random_instance(5)
    hp = Hyperparams(a=1.0, b=1.0, alpha=0.0, xi=0.0)
    c = 3.0
    scaled = Dataset(data.X, c * data.Y)
    r1 = cond_sigma2_given_beta_tau(state.beta, tau, data, hp).rate
    r2 = cond_sigma2_given_beta_tau(c * state.beta, tau, scaled, hp).rate
    assert r2 == pytest.approx(c * c * r1, rel=1e-13)


def test_sigma2_given_tau_takes_no_beta():
    params = inspect.signature(cond_sigma2_given_tau).parameters
    assert "beta" not in params and "state" not in params


def test_sigma2_given_tau_zero_design_and_tiny_tau():
    r = np.random.default_rng(6)
    hp = Hyperparams(a=1.0, b=1.0, alpha=0.5, xi=2.0)
    data0 = Dataset(np.zeros((4, 2)), r.standard_normal(4))
    ig = cond_sigma2_given_tau(np.ones(2), data0, hp)
    assert ig.shape == (4 + 1.0) / 2 and ig.rate == pytest.approx((data0.yty + 4.0) / 2)
    data, _, _ = random_instance(6)
    ig = cond_sigma2_given_tau(np.full(3, 1e-12), data, hp)
    assert ig.rate == pytest.approx((data.yty + 4.0) / 2, rel=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_sigma2_given_tau_dense_oracle(seed):
    data, tau, _ = random_instance(seed, 3, 2)
    hp = Hyperparams(a=1.0, b=1.0, alpha=0.0, xi=0.7)
    A = data.gram + np.diag(1 / tau)
    proj = np.eye(3) - data.X @ np.linalg.inv(A) @ data.X.T
    ig = cond_sigma2_given_tau(tau, data, hp)
    assert ig.rate == pytest.approx((data.Y @ proj @ data.Y + 1.4) / 2, abs=1e-8)
    assert ig.rate >= hp.xi


def test_determinant_domination():
    for seed in range(20):
        data, tau, _ = random_instance(seed, 3, 4)
        A = data.gram + np.diag(1 / tau)
        assert np.linalg.slogdet(A)[1] >= -np.sum(np.log(tau)) - 1e-12


# ---------------------------------------------------------------- tau


def test_cond_tau_params():
    hp = Hyperparams(a=1.0, b=1.0)
    assert all(g.lam == 0.5 for g in cond_tau(ChainState(np.array([0.3, -2.0]), 1.0), hp))
    got = cond_tau(ChainState(np.array([0.5]), 0.25), Hyperparams(a=0.75, b=2.0))
    assert got == [GigParams(0.25, 1.0, 4.0)]


def test_cond_tau_improper():
    with pytest.raises(ImproperConditionalError, match=r"tau\[1\]"):
        cond_tau(ChainState(np.array([1.0, 0.0]), 1.0), Hyperparams(a=0.5, b=1.0))
    # a > 1/2 keeps beta_j = 0 proper (Gamma limit).
    assert cond_tau(ChainState(np.array([0.0]), 1.0), Hyperparams(a=0.75, b=1.0))[0].chi == 0.0


def test_tau_density_normalizes():
    hp = Hyperparams(a=0.75, b=2.0)
    f = lambda t: math.exp(float(log_cond_tau_density(t, 1.0, 1.0, hp)))
    val, _ = integrate.quad(f, 0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    assert val == pytest.approx(1.0, abs=1e-8)
    f0 = lambda t: math.exp(float(log_cond_tau_density(t, 0.0, 1.0, hp)))
    assert integrate.quad(f0, 0, np.inf, epsrel=1e-12)[0] == pytest.approx(1.0, abs=1e-8)
