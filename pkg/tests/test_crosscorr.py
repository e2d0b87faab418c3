import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from voxfc.covkernels import RegionGeometry, RegionParams
from voxfc.crosscorr import (CorrSummary, PooledTheta, empirical_corr, empirical_corr_batch, m_factor,
                             omega, omega_stats, region_whitening, verify_pd, y_moments)
from voxfc.errors import DomainError, SizeError
from voxfc.simulator import TrueModel, simulate_dataset, SeedSpec

from conftest import BASE1, BASE2, random_geom, random_params


def m_double_sum(phi, T):
    t = np.arange(T)
    return float(np.sum(phi ** (2.0 * np.abs(t[:, None] - t[None, :])))) / T


def test_empirical_corr_examples():
    s = empirical_corr(np.ones((5, 1)), np.ones((5, 1)))
    assert s.y.tolist() == [1.0] and s.T == 5
    assert np.all(empirical_corr(np.ones((4, 2)), np.zeros((4, 3))).y == 0)
    assert empirical_corr([[1.0], [-1.0]], [[1.0], [1.0]]).y.tolist() == [0.0]


def test_empirical_corr_ordering_is_region1_outer(rng):
    z1, z2 = rng.standard_normal((6, 2)), rng.standard_normal((6, 3))
    y = empirical_corr(z1, z2).y
    for j in range(2):
        for k in range(3):
            assert y[j * 3 + k] == pytest.approx(np.mean(z1[:, j] * z2[:, k]), rel=1e-14)
    batch = empirical_corr_batch(z1[None], z2[None])
    np.testing.assert_allclose(batch[0].ravel(), y, rtol=1e-14)


def test_empirical_corr_errors():
    with pytest.raises(DomainError):
        empirical_corr(np.ones((4, 1)), np.ones((5, 1)))
    with pytest.raises(DomainError):
        empirical_corr(np.ones((0, 1)), np.ones((0, 1)))
    with pytest.raises(DomainError):
        CorrSummary([0.1, np.nan], 3)


def test_m_factor_examples():
    assert m_factor(1.0, 7) == 7.0
    assert m_factor(1e-9, 13) == pytest.approx(1.0, abs=1e-15)
    assert m_factor(0.0, 13) == 1.0
    assert m_factor(0.3, 100) == pytest.approx(m_double_sum(0.3, 100), abs=1e-12)


def test_m_factor_closed_form_grid():
    for phi in np.arange(1, 20) * 0.05:
        for T in range(1, 201):
            assert abs(m_factor(phi, T) - m_double_sum(phi, T)) < 1e-12


def test_m_factor_large_T_limit():
    # the gap to the limit closes like 2 q / (T (1 - q)^2) with q = phi^2
    for phi in np.arange(1, 19) * 0.05:
        q = phi ** 2
        limit = (1 + q) / (1 - q)
        for T in (10_000, 100_000, 1_000_000):
            gap = limit - m_factor(phi, T)
            assert gap == pytest.approx(2 * q / (T * (1 - q) ** 2), rel=1e-6)
    assert abs(m_factor(0.1, 100_000) - (1.01 / 0.99)) < 1e-6


def test_m_factor_near_unit_root_matches_double_sum():
    for phi in (0.9995, 0.99999):
        assert m_factor(phi, 300) == pytest.approx(m_double_sum(phi, 300), rel=1e-12)


def _theta(phi, r1=BASE1, r2=BASE2):
    return PooledTheta(r1, r2, phi)


def test_omega_scalar_examples():
    g = RegionGeometry([[0, 0, 0]])
    assert omega(_theta(0.0), g, g, 100).matrix[0, 0] == pytest.approx(1.0, abs=1e-15)
    m = m_factor(0.3, 100)
    assert omega(_theta(0.3), g, g, 100).matrix[0, 0] == pytest.approx(1 + 0.09 * (m - 1), abs=1e-14)


def test_omega_baseline_geometry_pd(rng):
    g1, g2 = random_geom(rng, 10), random_geom(rng, 10, offset=2.0)
    ok, lam = verify_pd(omega(_theta(0.3), g1, g2, 100).matrix)
    assert ok and lam > 0


def test_omega_cap(rng):
    g = RegionGeometry(np.arange(70.0)[:, None] * np.array([1.0, 0, 0]))
    with pytest.raises(SizeError):
        omega(_theta(0.3), g, g, 10)


def test_omega_single_entry_by_hand():
    # two voxels per region; entry ((0,0),(1,1)) expanded term by term
    g1 = RegionGeometry([[0, 0, 0], [1, 0, 0]])
    g2 = RegionGeometry([[0, 0, 0], [0, 2, 0]])
    r1 = RegionParams(0.5, 0.3, 0.2, 1.0, 0.3)
    r2 = RegionParams(0.2, 0.6, 0.2, 4.0, 0.3)
    th, T = PooledTheta(r1, r2, 0.3), 20
    a, b = math.exp(-1.0), math.exp(-0.5)
    m = m_factor(0.3, T)
    want = (0.5 * 0.2 + 0.5 * 0.6 * b + 0 + 0.2 * 0.3 * a + 0.3 * 0.6 * m * a * b)
    assert omega(th, g1, g2, T).matrix[0, 3] == pytest.approx(want, abs=1e-14)


def test_y_moments_examples(rng):
    g1, g2 = random_geom(rng, 2), random_geom(rng, 3, offset=2.0)
    mom = y_moments(_theta(0.3), 0.0, g1, g2, 50)
    assert np.all(mom.mean == 0)
    g = RegionGeometry([[0, 0, 0]])
    mom = y_moments(_theta(0.0), 0.0, g, g, 40)
    assert mom.cov[0, 0] == pytest.approx(1 / 40, abs=1e-15)
    mom = y_moments(_theta(0.3), 0.4, g1, g2, 50)
    np.testing.assert_allclose(mom.mean, 0.4 * 0.4)
    np.testing.assert_allclose(mom.cov, (0.16 ** 2 + mom.omega.matrix) / 50, rtol=1e-14)
    with pytest.raises(DomainError):
        y_moments(_theta(0.3), 1.0, g1, g2, 50)


def test_verify_pd_examples():
    assert verify_pd(np.eye(3)) == (True, 1.0)
    ok, lam = verify_pd(np.diag([1.0, -1.0]))
    assert not ok and lam == -1.0
    with pytest.raises(DomainError):
        verify_pd(np.array([[1.0, 0.3], [0.0, 1.0]]))


def _random_config(rng):
    phi = float(rng.uniform(0.01, 0.99))
    r1, r2 = random_params(rng, phi), random_params(rng, phi)
    g1 = random_geom(rng, int(rng.integers(1, 13)))
    g2 = random_geom(rng, int(rng.integers(1, 13)), offset=2.0)
    return PooledTheta(r1, r2, phi), g1, g2, int(rng.integers(1, 200))


@given(st.integers(0, 2**32 - 1))
def test_omega_and_y_cov_positive_definite(s):
    rng = np.random.default_rng(s)
    th, g1, g2, T = _random_config(rng)
    mom = y_moments(th, float(rng.uniform(-0.95, 0.95)), g1, g2, T)
    assert verify_pd(mom.omega.matrix)[0]
    assert verify_pd(mom.cov)[0]


@given(st.integers(0, 2**32 - 1))
def test_permutation_exchangeability(s):
    rng = np.random.default_rng(s)
    th, g1, g2, T = _random_config(rng)
    p1, p2 = rng.permutation(g1.n), rng.permutation(g2.n)
    G1, G2 = RegionGeometry(g1.coords[p1]), RegionGeometry(g2.coords[p2])
    perm = (p1[:, None] * g2.n + p2[None, :]).ravel()
    O, Op = omega(th, g1, g2, T).matrix, omega(th, G1, G2, T).matrix
    np.testing.assert_allclose(Op, O[np.ix_(perm, perm)], rtol=1e-12, atol=1e-14)
    z1, z2 = rng.standard_normal((T, g1.n)), rng.standard_normal((T, g2.n))
    np.testing.assert_allclose(empirical_corr(z1[:, p1], z2[:, p2]).y, empirical_corr(z1, z2).y[perm],
                               rtol=1e-13, atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_factorized_stats_match_dense_omega(s):
    rng = np.random.default_rng(s)
    th, g1, g2, T = _random_config(rng)
    O = omega(th, g1, g2, T)
    y = rng.standard_normal(g1.n * g2.n)
    R1 = np.exp(-g1.pairwise_dist / th.region1.psi)
    R2 = np.exp(-g2.pairwise_dist / th.region2.psi)
    w1, w2 = region_whitening(th.region1, R1), region_whitening(th.region2, R2)
    a, b, q, ld = omega_stats(y.reshape(1, g1.n, g2.n), w1, w2, th.kappa(T))
    one = np.ones_like(y)
    assert a[0] == pytest.approx(y @ O.solve(y), rel=1e-8)
    assert b[0] == pytest.approx(one @ O.solve(y), rel=1e-8, abs=1e-8)
    assert q[0] == pytest.approx(one @ O.solve(one), rel=1e-8)
    assert ld[0] == pytest.approx(O.logdet(), rel=1e-8, abs=1e-8)


def test_summary_moments_monte_carlo(rng):
    # small-scale version of the Isserlis check: shared geometry, unstandardized data
    g1 = RegionGeometry([[0, 0, 0], [0.5, 0.2, 0.1]])
    g2 = RegionGeometry([[2, 2, 2], [2.3, 2.8, 2.1]])
    model = TrueModel(BASE1, BASE2, [0.5], 10, geom1=g1, geom2=g2)
    N = 20_000
    data = simulate_dataset(model, np.ones((N, 1)), SeedSpec(7), standardize_data=False)
    Y = np.array([empirical_corr(p.z1, p.z2).y for p in data])
    mom = y_moments(_theta(0.3), math.tanh(0.25), g1, g2, 10)
    mc_se = Y.std(axis=0, ddof=1) / math.sqrt(N)
    assert np.all(np.abs(Y.mean(axis=0) - mom.mean) < 4 * mc_se)
    C = np.cov(Y, rowvar=False)
    D = Y - Y.mean(axis=0)
    se_c = np.sqrt(np.var(D[:, :, None] * D[:, None, :], axis=0, ddof=1) / N)
    assert np.all(np.abs(C - mom.cov) < 5 * se_c)
