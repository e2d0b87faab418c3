"""Competitor estimators: ROI-averaging OLS and the joint voxel-level MLE."""

from dataclasses import dataclass
import math

import numpy as np
from scipy.linalg import toeplitz
from scipy.optimize import minimize

from . import kernels
from .covkernels import RegionParams, region_cov
from .crosscorr import PooledTheta
from .errors import DataFormatError, DomainError, FitError, SizeError
from .estimator import (LOG_2PI, PHI_EPS, RHO_CLAMP, _participant_geoms, from_unconstrained,
                        to_unconstrained, two_step_fit)
from .simulator import as_design

DEFAULT_JOINT_CAP = 2500


@dataclass(frozen=True, eq=False)
class UnivariateFit:
    rho: np.ndarray
    beta_hat: np.ndarray
    se_analytic: np.ndarray
    se_boot: np.ndarray
    residual_var: float
    response: np.ndarray


def roi_connectivity(participants, lambda1, lambda2=None):
    """Per-participant connectivity from ROI-averaged series, clamped inside (-1, 1).

    With numeric ``lambda1`` / ``lambda2`` the sample covariance of the two
    averages is divided by ``lambda1 * lambda2``; with ``lambda1 == "sample"``
    the Pearson correlation of the averages is used instead.
    """
    out = np.empty(len(participants))
    for i, p in enumerate(participants):
        a1 = np.asarray(p.z1, dtype=float).mean(axis=1)
        a2 = np.asarray(p.z2, dtype=float).mean(axis=1)
        if a1.size != a2.size or a1.size < 2:
            raise DataFormatError(f"participant {p.id}: need two series of equal length >= 2")
        d1, d2 = a1 - a1.mean(), a2 - a2.mean()
        if not (np.any(d1) and np.any(d2)):
            raise DataFormatError(f"participant {p.id}: ROI-averaged series is constant")
        if isinstance(lambda1, str):
            if lambda1 != "sample":
                raise DomainError(f"unknown lambda mode {lambda1!r}")
            r = float(d1 @ d2 / math.sqrt((d1 @ d1) * (d2 @ d2)))
        else:
            if not (lambda1 > 0 and lambda2 > 0):
                raise DomainError("lambda1 and lambda2 must be positive")
            r = float(d1 @ d2) / (a1.size - 1) / (lambda1 * lambda2)
        out[i] = r
    return np.clip(out, -1.0 + RHO_CLAMP, 1.0 - RHO_CLAMP)


def _ols(X, r):
    beta, *_ = np.linalg.lstsq(X, r, rcond=None)
    resid = r - X @ beta
    return beta, float(resid @ resid)


def univariate_fit(participants, lambda1="sample", lambda2=None, B=0, rng=None):
    """OLS of ``logit((rho_i + 1) / 2)`` on the covariates.

    Analytic variance is ``s2 (X'X)^-1`` with ``s2 = RSS / (N - p)``; ``B > 0``
    adds participant-bootstrap standard errors.
    """
    if len(participants) == 0:
        raise DomainError("no participants")
    X = as_design([p.covariates for p in participants])
    N, p = X.shape
    if N <= p:
        raise DomainError(f"need more participants ({N}) than covariates ({p})")
    if np.linalg.matrix_rank(X) < p:
        raise DomainError("design matrix is rank deficient")
    rho = roi_connectivity(participants, lambda1, lambda2)
    r = 2.0 * np.arctanh(rho)
    beta, rss = _ols(X, r)
    s2 = rss / (N - p)
    se = np.sqrt(s2 * np.diag(np.linalg.inv(X.T @ X)))
    se_boot = None
    if B:
        if B < 2:
            raise DomainError("bootstrap needs B >= 2")
        rng = rng if rng is not None else np.random.default_rng()
        draws = []
        for _ in range(B):
            idx = rng.integers(0, N, N)
            if np.linalg.matrix_rank(X[idx]) < p:
                continue
            draws.append(_ols(X[idx], r[idx])[0])
        if len(draws) < 2:
            raise FitError("too few usable bootstrap resamples")
        se_boot = np.std(np.array(draws), axis=0, ddof=1)
    return UnivariateFit(rho, beta, se, se_boot, s2, r)


# ---------------------------------------------------------------------------
# Joint voxel-level MLE
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FullMLEFit:
    beta_hat: np.ndarray
    theta_hat: PooledTheta
    loglik: float
    converged: bool
    n_evals: int


def joint_cov(theta, rho, geom1, geom2, T):
    """Dense covariance of ``[vec(Z1), vec(Z2)]`` for one participant (reference path)."""
    r1 = RegionParams(theta.region1.lambda2, theta.region1.sigma2, theta.region1.tau2,
                      theta.region1.psi, theta.phi)
    r2 = RegionParams(theta.region2.lambda2, theta.region2.sigma2, theta.region2.tau2,
                      theta.region2.psi, theta.phi)
    s1 = region_cov(r1, geom1, T).matrix
    s2 = region_cov(r2, geom2, T).matrix
    cross = rho * theta.lambda_prod * np.kron(np.eye(T), np.ones((geom1.n, geom2.n)))
    return np.block([[s1, cross], [cross.T, s2]])


class JointLikelihood:
    """Negative joint log-likelihood of both regions' voxel series."""

    def __init__(self, participants, cap=DEFAULT_JOINT_CAP):
        if len(participants) == 0:
            raise DomainError("full MLE needs at least one participant")
        self.Z1 = np.ascontiguousarray(np.array([p.z1 for p in participants], dtype=float))
        self.Z2 = np.ascontiguousarray(np.array([p.z2 for p in participants], dtype=float))
        if self.Z1.ndim != 3 or self.Z2.ndim != 3 or self.Z1.shape[:2] != self.Z2.shape[:2]:
            raise DataFormatError("participants must share T and voxel counts")
        self.N, self.T, self.n1 = self.Z1.shape
        self.n2 = self.Z2.shape[2]
        if (self.n1 + self.n2) * self.T > cap:
            raise SizeError(f"(n1 + n2) * T = {(self.n1 + self.n2) * self.T} exceeds cap {cap}")
        self.X = as_design([p.covariates for p in participants])
        g1 = _participant_geoms(participants, 1)
        g2 = _participant_geoms(participants, 2)
        self.d1 = np.array([g.pairwise_dist for g in ([g1] if hasattr(g1, "n") else g1)])
        self.d2 = np.array([g.pairwise_dist for g in ([g2] if hasattr(g2, "n") else g2)])

    def nll(self, theta, beta):
        T = self.T
        dt, U = np.linalg.eigh(toeplitz(theta.phi ** np.arange(T)))
        e1, V1 = np.linalg.eigh(np.exp(-self.d1 / theta.region1.psi))
        e2, V2 = np.linalg.eigh(np.exp(-self.d2 / theta.region2.psi))
        rho = np.tanh(0.5 * (self.X @ beta))
        r1, r2 = theta.region1, theta.region2
        terms = kernels.joint_nll_terms(self.Z1, self.Z2, np.ascontiguousarray(U), dt,
                                        np.ascontiguousarray(e1), np.ascontiguousarray(V1),
                                        np.ascontiguousarray(e2), np.ascontiguousarray(V2),
                                        r1.lambda2, r1.sigma2, r1.tau2, r2.lambda2, r2.sigma2, r2.tau2,
                                        np.ascontiguousarray(rho))
        return float(np.sum(terms)) + 0.5 * self.N * (self.n1 + self.n2) * T * LOG_2PI

    def loglik(self, theta, beta):
        return -self.nll(theta, np.asarray(beta, dtype=float))


def _pack(theta, beta):
    r1, r2 = theta.region1, theta.region2
    phi = min(max(theta.phi, PHI_EPS), 1.0 - PHI_EPS)
    u1 = to_unconstrained(r1.lambda2, r1.sigma2, r1.tau2, r1.psi, phi)
    u2 = to_unconstrained(r2.lambda2, r2.sigma2, r2.tau2, r2.psi, phi)
    return np.concatenate([u1[:3], u2[:3], u1[3:], np.asarray(beta, dtype=float)])


def _unpack(v):
    l1, s1, t1, psi1, phi = from_unconstrained(np.r_[v[0:3], v[6]])
    l2, s2, t2, psi2, _ = from_unconstrained(np.r_[v[3:6], v[6]])
    r1 = RegionParams.normalized(l1, s1, t1, psi1, phi)
    r2 = RegionParams.normalized(l2, s2, t2, psi2, phi)
    return PooledTheta(r1, r2, phi), v[7:]


def full_mle_fit(participants, init=None, method="lbfgs", max_iter=2000, cap=DEFAULT_JOINT_CAP):
    """Jointly maximize the two-region voxel likelihood over covariance parameters and ``beta``.

    ``init`` is ``(PooledTheta, beta)``; by default the two-step estimate.
    ``method`` is ``"lbfgs"`` (finite-difference gradient) or ``"nelder-mead"``.
    """
    lik = JointLikelihood(participants, cap)
    if init is None:
        res = two_step_fit(participants, B=0)
        init = (res.theta, res.fit.beta_hat)
    v0 = _pack(*init)
    count = {"n": 0}

    def f(v):
        count["n"] += 1
        try:
            theta, beta = _unpack(v)
        except DomainError:
            return math.inf
        val = lik.nll(theta, beta)
        return val / lik.N if math.isfinite(val) else math.inf

    if method == "lbfgs":
        opt = minimize(f, v0, method="L-BFGS-B", options={"maxiter": max_iter, "ftol": 1e-12})
    elif method == "nelder-mead":
        opt = minimize(f, v0, method="Nelder-Mead",
                       options={"maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-8 * max(abs(f(v0)), 1.0)})
    else:
        raise DomainError(f"unknown optimizer {method!r}")
    if not math.isfinite(opt.fun):
        raise FitError("full MLE found no finite likelihood value")
    theta, beta = _unpack(opt.x)
    return FullMLEFit(np.array(beta), theta, -opt.fun * lik.N, bool(opt.success), count["n"])
