import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from voxfc.baselines import (JointLikelihood, full_mle_fit, joint_cov, roi_connectivity,
                             univariate_fit)
from voxfc.covkernels import DenseSPD, RegionGeometry, RegionParams
from voxfc.crosscorr import PooledTheta
from voxfc.errors import DataFormatError, DomainError, SizeError
from voxfc.estimator import LOG_2PI, two_step_fit
from voxfc.simulator import ParticipantData, SeedSpec, TrueModel, simulate_dataset

from conftest import BASE1, BASE2


def _participants(rng, N, p=2, T=20, n=2):
    out = []
    for i in range(N):
        x = np.r_[1.0, rng.standard_normal(p - 1)]
        out.append(ParticipantData(i, rng.standard_normal((T, n)), rng.standard_normal((T, n)), x))
    return out


@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_ols_matches_normal_equations(s, p):
    rng = np.random.default_rng(s)
    parts = _participants(rng, 12, p)
    u = univariate_fit(parts)
    X = np.array([q.covariates for q in parts])
    r = u.response
    beta = np.linalg.solve(X.T @ X, X.T @ r)
    np.testing.assert_allclose(u.beta_hat, beta, rtol=1e-10, atol=1e-10)
    s2 = np.sum((r - X @ beta) ** 2) / (12 - p)
    assert u.residual_var == pytest.approx(s2, rel=1e-10)
    np.testing.assert_allclose(u.se_analytic, np.sqrt(s2 * np.diag(np.linalg.inv(X.T @ X))), rtol=1e-10)


def test_intercept_only_closed_form(rng):
    parts = _participants(rng, 15, p=1)
    u = univariate_fit(parts)
    assert u.beta_hat[0] == pytest.approx(u.response.mean(), rel=1e-12)
    assert u.residual_var == pytest.approx(u.response.var(ddof=1), rel=1e-12)


def test_roi_connectivity_modes(rng):
    parts = _participants(rng, 3, T=30, n=3)
    a1 = parts[0].z1.mean(axis=1)
    a2 = parts[0].z2.mean(axis=1)
    c = np.cov(a1, a2)[0, 1]
    got = roi_connectivity(parts, 0.5, 0.8)[0]
    assert got == pytest.approx(np.clip(c / 0.4, -1 + 1e-6, 1 - 1e-6), rel=1e-12)
    assert roi_connectivity(parts, "sample")[0] == pytest.approx(np.corrcoef(a1, a2)[0, 1], rel=1e-12)
    with pytest.raises(DomainError):
        roi_connectivity(parts, "pearson")
    with pytest.raises(DomainError):
        roi_connectivity(parts, -1.0, 1.0)


def test_identical_regions_are_clamped(rng):
    parts = _participants(rng, 6)
    for p in parts:
        p.z2 = p.z1.copy()
    u = univariate_fit(parts)
    assert np.all(u.rho == 1 - 1e-6)
    assert np.all(np.isfinite(u.response))


def test_univariate_errors(rng):
    parts = _participants(rng, 3, p=3)
    with pytest.raises(DomainError):
        univariate_fit(parts)
    parts = _participants(rng, 6, p=2)
    for p in parts:
        p.covariates = np.array([1.0, 2.0])
    with pytest.raises(DomainError):
        univariate_fit(parts)
    parts = _participants(rng, 6)
    parts[2].z1 = np.ones_like(parts[2].z1)
    with pytest.raises(DataFormatError):
        univariate_fit(parts)
    with pytest.raises(DomainError):
        univariate_fit([])


def test_univariate_bootstrap(rng):
    parts = _participants(rng, 60)
    u = univariate_fit(parts, B=200, rng=np.random.default_rng(1))
    assert u.se_boot.shape == (2,)
    ratio = u.se_boot / u.se_analytic
    assert np.all((ratio > 0.3) & (ratio < 3))
    v = univariate_fit(parts, B=200, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(u.se_boot, v.se_boot)


# --- full MLE -------------------------------------------------------------

def _mini(N=50, T=10, n=2, seed=3, beta=(0.5, 0.5), r1=BASE1, r2=BASE2):
    g1 = RegionGeometry(np.random.default_rng(seed).random((n, 3)))
    g2 = RegionGeometry(2 + np.random.default_rng(seed + 1).random((n, 3)))
    m = TrueModel(r1, r2, list(beta), T, geom1=g1, geom2=g2)
    X = np.column_stack([np.ones(N), np.arange(N) % 2])
    return simulate_dataset(m, X, SeedSpec(seed), standardize_data=False)


def test_joint_likelihood_matches_dense(rng):
    data = _mini(N=4, T=5, n=2)
    per = []
    for p in data:
        p.geom1 = RegionGeometry(rng.random((2, 3)))
        per.append(p)
    lik = JointLikelihood(per)
    th = PooledTheta(RegionParams(0.3, 0.4, 0.3, 1.5, 0.4), RegionParams(0.5, 0.2, 0.3, 3.0, 0.4), 0.4)
    beta = np.array([0.2, -0.7])
    want = 0.0
    for p in per:
        rho = math.tanh(0.5 * float(p.covariates @ beta))
        C = DenseSPD(joint_cov(th, rho, p.geom1, p.geom2, 5), check=False)
        v = np.r_[p.z1.ravel(), p.z2.ravel()]
        want += 0.5 * (v.size * LOG_2PI + C.logdet() + v @ C.solve(v))
    assert lik.nll(th, beta) == pytest.approx(want, rel=1e-10)


def test_full_mle_likelihood_dominance():
    data = _mini(N=50, T=10, n=2)
    lik = JointLikelihood(data)
    th = PooledTheta(BASE1, BASE2, 0.3)
    beta = np.array([0.5, 0.5])
    ref = lik.loglik(th, beta)
    assert ref > lik.loglik(th, beta + [0.6, 0.0])
    assert ref > lik.loglik(PooledTheta(BASE1, BASE2, 0.7), beta)
    fit = full_mle_fit(data, init=(th, beta))
    assert fit.loglik >= ref


def test_full_mle_agrees_with_two_step():
    data = _mini(N=150, T=20, n=2, seed=8)
    res = two_step_fit(data, B=30, rng=np.random.default_rng(0))
    fit = full_mle_fit(data, init=(res.theta, res.fit.beta_hat))
    assert np.all(np.abs(fit.beta_hat - res.fit.beta_hat) < 2 * math.sqrt(2) * res.fit.se)
    assert fit.theta_hat.region1.lambda2 + fit.theta_hat.region1.sigma2 + fit.theta_hat.region1.tau2 == \
        pytest.approx(1.0)


def test_full_mle_near_univariate_without_voxel_structure():
    r = RegionParams(0.9, 0.002, 0.098, 1.0, 0.3)
    data = _mini(N=150, T=30, n=2, seed=21, r1=r, r2=r)
    uni = univariate_fit(data, math.sqrt(0.9), math.sqrt(0.9))
    th = PooledTheta(r, r, 0.3)
    fit = full_mle_fit(data, init=(th, uni.beta_hat))
    assert np.all(np.abs(fit.beta_hat - uni.beta_hat) < 2 * uni.se_analytic)


def test_full_mle_errors():
    with pytest.raises(DomainError):
        full_mle_fit([])
    data = _mini(N=3, T=10, n=2)
    with pytest.raises(SizeError):
        JointLikelihood(data, cap=30)
    with pytest.raises(DomainError):
        full_mle_fit(data, init=(PooledTheta(BASE1, BASE2, 0.3), np.zeros(2)), method="powell")
