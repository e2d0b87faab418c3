import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from voxfc.covkernels import RegionGeometry, RegionParams, region_cov
from voxfc.errors import DomainError
from voxfc.simulator import (CovariateRow, HeterogeneitySpec, SeedSpec, TrueModel, apply_heterogeneity,
                             as_design, connectivity_logit, make_scenario_covariates, rho_from_covariates,
                             sample_voxels, simulate_dataset, simulate_participant)

from conftest import BASE1, BASE2


def test_rho_from_covariates_examples():
    assert rho_from_covariates([1.0, 0.0], [0.0, 3.0]) == 0.0
    assert rho_from_covariates([1.0], [80.0]) == pytest.approx(1.0, abs=1e-15)
    assert rho_from_covariates(CovariateRow([1.0, 1.0]), [0.25, 0.25]) == pytest.approx(0.24491866240370913,
                                                                                          abs=1e-15)
    with pytest.raises(DomainError):
        rho_from_covariates([1.0, 1.0], [0.5])


@given(st.floats(-8, 8))
def test_link_round_trip(eta):
    # beyond |eta| ~ 8 tanh saturates and atanh amplifies rounding past 1e-12
    assert abs(connectivity_logit(rho_from_covariates([1.0], [eta])) - eta) < 1e-12


def test_covariate_row():
    r = CovariateRow([1, 0.5])
    assert r.p == 2 and r.x.dtype == float
    with pytest.raises(DomainError):
        CovariateRow([1.0, np.inf])
    X = as_design([CovariateRow([1, 2]), [1, 3]])
    assert X.tolist() == [[1, 2], [1, 3]]


def test_sample_voxels(rng):
    g = sample_voxels(10, ((0, 0, 0), (1, 1, 1)), rng)
    assert g.n == 10 and np.all((g.coords >= 0) & (g.coords <= 1))
    g = sample_voxels(10, ((2, 2, 2), (3, 3, 3)), rng)
    assert np.all((g.coords >= 2) & (g.coords <= 3))
    assert sample_voxels(1, ((5, 5, 5), (6, 7, 8)), rng).n == 1
    a = sample_voxels(4, ((0, 0, 0), (1, 1, 1)), np.random.default_rng(3))
    b = sample_voxels(4, ((0, 0, 0), (1, 1, 1)), np.random.default_rng(3))
    np.testing.assert_array_equal(a.coords, b.coords)
    with pytest.raises(DomainError):
        sample_voxels(3, ((0, 0, 0), (1, 0, 1)), rng)


def test_true_model_requires_shared_phi():
    with pytest.raises(DomainError):
        TrueModel(BASE1, RegionParams(0.4, 0.3, 0.3, 5.0, 0.5), [0.5, 0.5], 10)
    with pytest.raises(DomainError):
        TrueModel(RegionParams(0.4, 0.3, 0.3, 1.0, 1.0), RegionParams(0.4, 0.3, 0.3, 1.0, 1.0), [0.5], 10)


def test_zero_noise_components_rejected():
    with pytest.raises(DomainError):
        RegionParams(1.0, 0.0, 0.0, 1.0, 0.3)


def test_standardization_invariant(small_model, rng):
    for _ in range(5):
        p = simulate_participant(small_model, [1.0, 1.0], rng)
        for z in (p.z1, p.z2):
            assert abs(z.mean()) < 1e-8
            assert abs(z.var() - 1.0) < 1e-6
    p = simulate_participant(small_model, [1.0, 1.0], rng, standardize_data=False)
    assert abs(p.z1.var() - 1.0) > 1e-6


def test_batch_matches_one_by_one(small_model, seed):
    X = np.column_stack([np.ones(5), [0, 1, 0, 1, 1]])
    batch = simulate_dataset(small_model, X, seed, replicate=3, chunk=2)
    for i, p in enumerate(batch):
        q = simulate_participant(small_model, X[i], seed.rng(3, 0, i), pid=i)
        np.testing.assert_array_equal(p.z1, q.z1)
        np.testing.assert_array_equal(p.z2, q.z2)


def test_dataset_is_deterministic_and_seed_sensitive(seed):
    m = TrueModel(BASE1, BASE2, [0.5, 0.5], 15, n1=3, n2=4)
    X = np.column_stack([np.ones(4), [0, 1, 1, 0]])
    a = simulate_dataset(m, X, seed)
    b = simulate_dataset(m, X, SeedSpec(seed.master_seed))
    c = simulate_dataset(m, X, SeedSpec(seed.master_seed + 1))
    for p, q, r in zip(a, b, c):
        assert np.array_equal(p.z1, q.z1) and np.array_equal(p.geom2.coords, q.geom2.coords)
        assert not np.array_equal(p.z1, r.z1)
    assert a[0].geom1.n == 3 and a[0].z2.shape == (15, 4)
    assert not np.array_equal(a[0].geom1.coords, a[1].geom1.coords)


def test_independent_regions_have_zero_mean_correlation():
    eps = 1e-3
    r = RegionParams(1 - 2 * eps, eps, eps, 1.0, 0.3)
    m = TrueModel(r, r, [0.0], 30, n1=2, n2=2)
    data = simulate_dataset(m, np.ones((1000, 1)), SeedSpec(11))
    y = np.array([np.mean(p.z1.T @ p.z2 / 30) for p in data])
    assert abs(y.mean()) < 4 * y.std(ddof=1) / math.sqrt(y.size)


def test_generated_covariance_matches_region_cov():
    g1 = RegionGeometry([[0, 0, 0], [0.4, 0.3, 0.2]])
    g2 = RegionGeometry([[2, 2, 2], [2.5, 2.1, 2.9]])
    r1 = RegionParams(0.3, 0.5, 0.2, 0.7, 0.6)
    r2 = RegionParams(0.4, 0.3, 0.3, 5.0, 0.6)
    m = TrueModel(r1, r2, [0.5], 3, geom1=g1, geom2=g2)
    N = 200_000
    data = simulate_dataset(m, np.ones((N, 1)), SeedSpec(5), standardize_data=False)
    for k, (g, r) in enumerate(((g1, r1), (g2, r2))):
        V = np.array([(p.z1 if k == 0 else p.z2).ravel() for p in data])
        C = V.T @ V / N
        se = np.sqrt(np.var(V[:, :, None] * V[:, None, :], axis=0, ddof=1) / N)
        assert np.all(np.abs(C - region_cov(r, g, 3).matrix) < 5 * se)


def test_cross_region_signal_covariance():
    g1 = RegionGeometry([[0, 0, 0]])
    g2 = RegionGeometry([[2, 2, 2]])
    m = TrueModel(BASE1, BASE2, [1.2], 4, geom1=g1, geom2=g2)
    N = 50_000
    data = simulate_dataset(m, np.ones((N, 1)), SeedSpec(9), standardize_data=False)
    prod = np.array([p.z1[:, 0] * p.z2[:, 0] for p in data])
    want = math.tanh(0.6) * 0.4
    se = prod.std(axis=0, ddof=1) / math.sqrt(N)
    assert np.all(np.abs(prod.mean(axis=0) - want) < 4 * se)
    lagged = np.array([p.z1[0, 0] * p.z2[1, 0] for p in data])
    assert abs(lagged.mean()) < 4 * lagged.std(ddof=1) / math.sqrt(N)


def test_heterogeneity_alpha_zero_is_identity(small_model, rng):
    assert apply_heterogeneity(small_model, HeterogeneitySpec(0.0), rng) is small_model
    with pytest.raises(DomainError):
        HeterogeneitySpec(-0.1)
    with pytest.raises(DomainError):
        HeterogeneitySpec(0.1, frozenset({"lambda"}))


def test_heterogeneity_gamma_moments(small_model):
    rng = np.random.default_rng(77)
    spec = HeterogeneitySpec(0.05, frozenset({"psi1"}))
    g = np.array([apply_heterogeneity(small_model, spec, rng).region1.psi for _ in range(100_000)])
    n = g.size
    assert abs(g.mean() - 1.0) < 3 * g.std() / math.sqrt(n)
    se_var = math.sqrt(np.var((g - g.mean()) ** 2) / n)
    assert abs(g.var() - 0.05) < 3 * se_var


def test_heterogeneity_phi_clamp_and_renormalization(small_model):
    rng = np.random.default_rng(8)
    spec = HeterogeneitySpec(0.2)
    for _ in range(2000):
        m = apply_heterogeneity(small_model, spec, rng)
        assert 0 < m.phi <= 0.99 and m.region1.phi == m.region2.phi
        for r in (m.region1, m.region2):
            assert r.lambda2 + r.sigma2 + r.tau2 == pytest.approx(1.0, abs=1e-12)
    big = TrueModel(RegionParams(0.4, 0.3, 0.3, 1.0, 0.98), RegionParams(0.4, 0.3, 0.3, 1.0, 0.98),
                    [0.5], 5, n1=2, n2=2)
    phis = [apply_heterogeneity(big, HeterogeneitySpec(0.2, frozenset({"phi"})), rng).phi for _ in range(500)]
    assert max(phis) == 0.99


def test_make_scenario_covariates():
    rng = np.random.default_rng(4)
    X = make_scenario_covariates("binary", rng, 4)
    assert X.shape == (4, 2) and np.all(X[:, 0] == 1) and set(X[:, 1]) <= {0.0, 1.0}
    X = make_scenario_covariates("realistic", rng, 50)
    assert X.shape == (50, 4) and np.all((X[:, 2] >= 0) & (X[:, 2] < 1))
    X = make_scenario_covariates("binary", rng, 10_000)
    assert abs(X[:, 1].mean() - 0.5) < 0.015
    with pytest.raises(DomainError):
        make_scenario_covariates("nonsense", rng, 3)
    with pytest.raises(DomainError):
        make_scenario_covariates("binary", rng)
