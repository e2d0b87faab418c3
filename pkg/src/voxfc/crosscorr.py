"""Cross-region voxel-wise correlation summaries and their model moments.

A summary vector ``y`` has length ``n1 * n2`` and is ordered ROI-1 voxel
outer / ROI-2 voxel inner, i.e. ``y = (Z1' Z2 / T).ravel()``. The covariance
blocks below use the same order, so ``kron(A1, A2)`` pairs an ``n1 x n1``
matrix for ROI 1 with an ``n2 x n2`` matrix for ROI 2.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .covkernels import DenseSPD, RegionParams, cholesky_lower, exp_spatial_corr
from .errors import DomainError, NotPDError, SizeError

DEFAULT_OMEGA_CAP = 4096


@dataclass(frozen=True)
class PooledTheta:
    """Region parameters for both ROIs plus the pooled temporal coefficient.

    The ``phi`` stored inside ``region1`` / ``region2`` are the per-region
    fits and are ignored by every formula; ``phi`` is the shared value. It may
    be 0 here (the limit with no temporal dependence), unlike in
    :class:`RegionParams`.
    """

    region1: RegionParams
    region2: RegionParams
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.phi) and 0 <= self.phi <= 1):
            raise DomainError(f"pooled phi must lie in [0, 1], got {self.phi}")

    @property
    def lambda_prod(self):
        return math.sqrt(self.region1.lambda2 * self.region2.lambda2)

    def kappa(self, T):
        """Weight of the extra ``R1 (x) R2`` term: ``sigma1^2 sigma2^2 (m - 1)``."""
        return self.region1.sigma2 * self.region2.sigma2 * (m_factor(self.phi, T) - 1.0)


@dataclass(frozen=True)
class CorrSummary:
    y: np.ndarray
    T: int
    n1: int = None
    n2: int = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        if not np.all(np.isfinite(y)):
            raise DomainError("correlation summary contains non-finite values")
        object.__setattr__(self, "y", y)
        if self.n1 is not None and self.n2 is not None and self.n1 * self.n2 != y.size:
            raise DomainError("summary length does not match n1 * n2")

    def as_matrix(self):
        return self.y.reshape(self.n1, self.n2)


@dataclass(frozen=True)
class YMoments:
    mean: np.ndarray
    omega: DenseSPD
    rho: float
    lambda_prod: float
    T: int

    @property
    def cov(self):
        c = (self.rho * self.lambda_prod) ** 2
        return (c + self.omega.matrix) / self.T


def empirical_corr(z1, z2):
    """Time-averaged products ``(1/T) sum_t z1[t, s1] * z2[t, s2]`` for all voxel pairs."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z1.ndim != 2 or z2.ndim != 2 or z1.size == 0 or z2.size == 0:
        raise DomainError("empirical_corr expects two non-empty T x n matrices")
    if z1.shape[0] != z2.shape[0]:
        raise DomainError(f"time length mismatch: {z1.shape[0]} vs {z2.shape[0]}")
    T = z1.shape[0]
    return CorrSummary((z1.T @ z2 / T).ravel(), T, z1.shape[1], z2.shape[1])


def empirical_corr_batch(Z1, Z2):
    """Stacked version of :func:`empirical_corr`: ``(N, T, n1), (N, T, n2) -> (N, n1, n2)``."""
    if Z1.shape[:2] != Z2.shape[:2]:
        raise DomainError("participant or time dimension mismatch")
    return np.matmul(np.swapaxes(Z1, 1, 2), Z2) / Z1.shape[1]


def m_factor(phi, T):
    """Temporal scaling ``(1/T) sum_{t,t'} phi^(2|t-t'|)`` in closed form."""
    T = int(T)
    if T < 1:
        raise DomainError(f"T must be positive, got {T}")
    phi = float(phi)
    if phi == 1.0:
        return float(T)
    q = phi * phi
    if 1.0 - q < 1e-3:
        # closed form cancels catastrophically near the unit root
        k = np.arange(1, T)
        return float(1.0 + 2.0 * np.sum((T - k) * q ** k) / T)
    qT1 = q ** (T - 1)
    return (1.0 + 2.0 * q * (1.0 - qT1) / (1.0 - q)
            - 2.0 * q * (1.0 - T * qT1 + (T - 1) * q ** T) / (T * (1.0 - q) ** 2))


def _spatial(geom, psi):
    return exp_spatial_corr(geom.pairwise_dist, psi)


def omega(theta, geom1, geom2, T, cap=DEFAULT_OMEGA_CAP):
    """Dense T-free covariance part of the summary, written term by term."""
    n1, n2 = geom1.n, geom2.n
    if n1 * n2 > cap:
        raise SizeError(f"omega of size {n1 * n2} exceeds cap {cap}")
    r1, r2 = theta.region1, theta.region2
    R1 = _spatial(geom1, r1.psi)
    R2 = _spatial(geom2, r2.psi)
    J1, J2 = np.ones((n1, n1)), np.ones((n2, n2))
    I1, I2 = np.eye(n1), np.eye(n2)
    m = m_factor(theta.phi, T)
    out = (r1.lambda2 * r2.lambda2 * np.ones((n1 * n2, n1 * n2))
           + r1.lambda2 * r2.sigma2 * np.kron(J1, R2)
           + r1.lambda2 * r2.tau2 * np.kron(J1, I2)
           + r2.lambda2 * r1.sigma2 * np.kron(R1, J2)
           + r1.sigma2 * r2.sigma2 * m * np.kron(R1, R2)
           + r1.sigma2 * r2.tau2 * np.kron(R1, I2)
           + r2.lambda2 * r1.tau2 * np.kron(I1, J2)
           + r2.sigma2 * r1.tau2 * np.kron(I1, R2)
           + r1.tau2 * r2.tau2 * np.eye(n1 * n2))
    return DenseSPD(out, check=False)


def y_moments(theta, rho, geom1, geom2, T):
    if not -1 < rho < 1:
        raise DomainError(f"rho must lie in (-1, 1), got {rho}")
    om = omega(theta, geom1, geom2, T)
    lp = theta.lambda_prod
    mean = np.full(geom1.n * geom2.n, rho * lp)
    return YMoments(mean, om, float(rho), lp, int(T))


def verify_pd(m, tol=1e-10):
    """Return ``(is_pd, min_eigenvalue)``; Cholesky decides, eigvalsh reports."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError("verify_pd expects a square matrix")
    scale = max(float(np.max(np.abs(m))), 1.0)
    if np.max(np.abs(m - m.T)) > tol * scale:
        raise DomainError("verify_pd expects a symmetric matrix")
    try:
        cholesky_lower(m)
        ok = True
    except NotPDError:
        ok = False
    min_eig = float(np.linalg.eigvalsh(m)[0])
    return ok, min_eig


# ---------------------------------------------------------------------------
# Factorized omega for likelihood work.
#
# The nine terms collapse to kron(C1, C2) + kappa * kron(R1, R2) with
# C_k = lambda_k^2 J + sigma_k^2 R_k + tau_k^2 I (the same-time covariance of
# region k). With P_k solving the generalized problem P' C P = I, P' R P = E,
# (P1 (x) P2)' omega (P1 (x) P2) = I + kappa * E1 (x) E2 is diagonal.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegionWhitening:
    P: np.ndarray       # (G, n, n)
    E: np.ndarray       # (G, n)
    logdet_C: np.ndarray  # (G,)


def region_whitening(params, R):
    """Generalized eigenbasis of ``(R, C)`` for a stack ``R`` of spatial matrices."""
    R = np.asarray(R, dtype=float)
    if R.ndim == 2:
        R = R[None]
    n = R.shape[-1]
    C = params.lambda2 + params.sigma2 * R + params.tau2 * np.eye(n)
    gam, Q = np.linalg.eigh(C)
    if np.any(gam <= 0):
        raise NotPDError(int(np.argmin(gam)), "same-time covariance is not positive definite")
    Cm = np.matmul(Q * (1.0 / np.sqrt(gam))[:, None, :], np.swapaxes(Q, 1, 2))
    M = np.matmul(np.matmul(Cm, R), Cm)
    E, W = np.linalg.eigh(0.5 * (M + np.swapaxes(M, 1, 2)))
    P = np.ascontiguousarray(np.matmul(Cm, W))
    return RegionWhitening(P, np.ascontiguousarray(E), np.sum(np.log(gam), axis=1))


def omega_stats(Y, w1, w2, kappa):
    """Per-participant scalars of the summary likelihood.

    Returns ``(a, b, q, logdet_omega)`` with ``a = y' O^-1 y``,
    ``b = 1' O^-1 y``, ``q = 1' O^-1 1`` for each participant's omega ``O``.
    """
    Y = np.ascontiguousarray(Y, dtype=float)
    kappa = np.ascontiguousarray(np.broadcast_to(np.asarray(kappa, dtype=float), (Y.shape[0],)))
    return kernels.omega_stats(Y, w1.P, w1.E, w1.logdet_C, w2.P, w2.E, w2.logdet_C, kappa)
