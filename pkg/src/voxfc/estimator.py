"""Two-step estimation of covariate effects on cross-region connectivity.

Step 1 fits each region's covariance parameters by maximum likelihood over
all participants. Step 2 holds those fits fixed, and maximizes the Gaussian
likelihood of the per-participant correlation summaries over ``beta``.
Standard errors come from a participant bootstrap of Step 2.
"""

from dataclasses import dataclass, field
import math
import time
import warnings

import numpy as np
from scipy.linalg import toeplitz
from scipy.optimize import minimize
from scipy.special import expit, logit
from scipy.stats import norm

from . import kernels
from .covkernels import DenseSPD, RegionGeometry, RegionParams, exp_spatial_corr
from .crosscorr import (CorrSummary, PooledTheta, empirical_corr, omega, omega_stats,
                        region_whitening)
from .errors import DataFormatError, DomainError, FitError

LOG_2PI = math.log(2.0 * math.pi)
PHI_EPS = 1e-6
RHO_CLAMP = 1e-6
Z_975 = float(norm.ppf(0.975))


# ---------------------------------------------------------------------------
# Unconstrained parameterization
# ---------------------------------------------------------------------------

def to_unconstrained(lambda2, sigma2, tau2, psi, phi):
    """Map a legal parameter set to R^4 (stick-breaking logits, log psi, logit phi).

    The variance triple is rescaled to sum to one first.
    """
    total = lambda2 + sigma2 + tau2
    l2, s2 = lambda2 / total, sigma2 / total
    return np.array([logit(l2), logit(s2 / (1.0 - l2)), math.log(psi), logit(phi)])


def from_unconstrained(u):
    """Inverse of :func:`to_unconstrained`; returns ``(lambda2, sigma2, tau2, psi, phi)``."""
    l2 = expit(u[0])
    s = expit(u[1])
    phi = min(max(expit(u[3]), PHI_EPS), 1.0 - PHI_EPS)
    return l2, (1.0 - l2) * s, (1.0 - l2) * (1.0 - s), math.exp(u[2]), phi


def _chain(u, g):
    """Gradient with respect to ``u`` from the gradient in natural parameters."""
    l2 = expit(u[0])
    s = expit(u[1])
    dl = l2 * (1.0 - l2)
    ds = s * (1.0 - s)
    psi = math.exp(u[2])
    phi = expit(u[3])
    gl, gs, gt, gp, gf = g
    return np.array([
        dl * (gl - s * gs - (1.0 - s) * gt),
        (1.0 - l2) * ds * (gs - gt),
        psi * gp,
        phi * (1.0 - phi) * gf,
    ])


# ---------------------------------------------------------------------------
# Step 1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Step1Fit:
    params: RegionParams
    loglik: float
    iterations: int
    converged: bool
    group: str = None
    n_participants: int = 0
    n_evals: int = 0
    method: str = "lbfgs"


def _stack_region(region_data, geom):
    """``(N, T, n)`` data and ``(G, n, n)`` distances with G = 1 (shared) or N."""
    if len(region_data) == 0:
        raise DomainError("step 1 needs at least one participant")
    shapes = {np.shape(z) for z in region_data}
    if len(shapes) != 1:
        raise DataFormatError(f"participants differ in (T, n) within one fit: {sorted(shapes)}")
    Z = np.ascontiguousarray(np.array(region_data, dtype=float))
    if Z.ndim != 3:
        raise DataFormatError("each participant's region data must be a T x n matrix")
    if not np.all(np.isfinite(Z)):
        raise DataFormatError("region data contain non-finite values")
    if isinstance(geom, RegionGeometry):
        geoms = [geom]
    else:
        geoms = list(geom)
        if len(geoms) != Z.shape[0]:
            raise DomainError("need one geometry, or one per participant")
    if any(g.n != Z.shape[2] for g in geoms):
        raise DataFormatError("geometry voxel count does not match data columns")
    dist = np.ascontiguousarray(np.array([g.pairwise_dist for g in geoms]))
    return Z, dist


class RegionLikelihood:
    """Negative log-likelihood of one region's data and its gradient.

    Evaluated in the eigenbases of the temporal and spatial correlation
    matrices, where the covariance is block diagonal with diagonal-plus-rank-one
    blocks. Eigendecompositions are cached for the last ``phi`` and ``psi``.
    """

    def __init__(self, region_data, geom):
        self.Z, self.dist = _stack_region(region_data, geom)
        self.N, self.T, self.n = self.Z.shape
        self._lag = np.abs(np.subtract.outer(np.arange(self.T), np.arange(self.T)))
        self._phi = None
        self._psi = None

    def _temporal(self, phi):
        if phi != self._phi:
            lag = self._lag
            dt, U = np.linalg.eigh(toeplitz(phi ** np.arange(self.T)))
            dR = np.where(lag > 0, lag * phi ** np.maximum(lag - 1, 0), 0.0)
            self._tcache = (np.ascontiguousarray(U), dt, np.ascontiguousarray(U.T @ dR @ U))
            self._phi = phi
        return self._tcache

    def _spatial(self, psi):
        if psi != self._psi:
            R = np.exp(-self.dist / psi)
            e, V = np.linalg.eigh(R)
            Kpsi = np.matmul(np.matmul(np.swapaxes(V, 1, 2), R * self.dist / psi ** 2), V)
            self._scache = (np.ascontiguousarray(e), np.ascontiguousarray(V), np.ascontiguousarray(Kpsi))
            self._psi = psi
        return self._scache

    def nll(self, lambda2, sigma2, tau2, psi, phi, want_grad=False):
        """Total negative log-likelihood and gradient in natural parameters."""
        U, dt, Kt = self._temporal(float(phi))
        e, V, Kpsi = self._spatial(float(psi))
        terms, grad = kernels.region_nll_terms(self.Z, U, dt, Kt, e, V, Kpsi,
                                               float(lambda2), float(sigma2), float(tau2), want_grad)
        total = float(np.sum(terms)) + 0.5 * self.N * self.T * self.n * LOG_2PI
        return total, grad.sum(axis=0)

    def loglik(self, params):
        return -self.nll(params.lambda2, params.sigma2, params.tau2, params.psi, params.phi)[0]


def moment_init(region_data, geom):
    """Method-of-moments starting values for Step 1.

    Same-voxel autocovariances at lags 1 and 2 give ``phi`` and ``sigma2``; a
    grid search over ``psi`` fits same-time cross-voxel covariances as
    ``lambda2 + sigma2 * exp(-d / psi)``; ``tau2`` takes the remainder.
    """
    Z, dist = _stack_region(region_data, geom)
    N, T, n = Z.shape
    c0 = float(np.mean(Z * Z))
    if T >= 3:
        c1 = float(np.mean(Z[:, 1:] * Z[:, :-1]))
        c2 = float(np.mean(Z[:, 2:] * Z[:, :-2]))
        phi = c2 / c1 if c1 > 0 else 0.5
    else:
        c1, phi = 0.3 * c0, 0.5
    phi = min(max(phi, 0.05), 0.95)
    sigma2 = max(c1 / phi, 0.05 * c0) if T >= 2 else c0 / 3.0
    psi, lambda2 = 1.0, max(c0 - sigma2, 0.0) / 2.0
    if n > 1:
        iu = np.triu_indices(n, 1)
        cov = np.einsum("itj,itk->ijk", Z, Z)[:, iu[0], iu[1]] / T
        d = dist[:, iu[0], iu[1]]
        if d.shape[0] == 1:
            d = np.broadcast_to(d, cov.shape)
        best = None
        for cand in np.logspace(-1.5, 1.5, 61):
            r = cov - sigma2 * np.exp(-d / cand)
            lam = float(np.mean(r))
            sse = float(np.sum((r - lam) ** 2))
            if best is None or sse < best[0]:
                best = (sse, cand, lam)
        psi, lambda2 = best[1], best[2]
    tau2 = c0 - lambda2 - sigma2
    floor = 0.02 * c0
    return RegionParams.normalized(max(lambda2, floor), max(sigma2, floor), max(tau2, floor), psi, phi)


def step1_fit(region_data, geom, init=None, method="lbfgs", max_iter=2000, tol=1e-8,
              restart=True, group=None):
    """Maximum likelihood fit of one region's covariance parameters.

    ``region_data`` is a list of ``T x n`` matrices, ``geom`` a shared
    :class:`RegionGeometry` or one per participant. ``method`` is ``"lbfgs"``
    (analytic gradient) or ``"nelder-mead"``.
    """
    lik = RegionLikelihood(region_data, geom)
    if init is None:
        init = moment_init(region_data, geom)
    scale = 1.0 / lik.N
    counter = {"n": 0}

    def f(u, want_grad):
        counter["n"] += 1
        th = from_unconstrained(u)
        if not all(math.isfinite(v) and v > 0 for v in th):
            return (math.inf, np.zeros(4)) if want_grad else math.inf
        # extreme candidates overflow; they are rejected as infinite below
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            val, g = lik.nll(*th, want_grad=want_grad)
        if not math.isfinite(val) or not np.all(np.isfinite(g)):
            return (math.inf, np.zeros(4)) if want_grad else math.inf
        if want_grad:
            return val * scale, _chain(u, g) * scale
        return val * scale

    u0 = to_unconstrained(init.lambda2, init.sigma2, init.tau2, init.psi,
                          min(init.phi, 1.0 - PHI_EPS))
    if method == "lbfgs":
        def run(u):
            return minimize(f, u, args=(True,), jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter, "ftol": tol * 1e-4, "gtol": 1e-7})
    elif method == "nelder-mead":
        f_start = abs(f(u0, False))

        def run(u):
            return minimize(f, u, args=(False,), method="Nelder-Mead",
                            options={"maxiter": max_iter, "xatol": tol, "fatol": tol * max(f_start, 1.0)})
    else:
        raise DomainError(f"unknown step-1 optimizer {method!r}")

    res = run(u0)
    iterations = int(res.nit)
    converged = bool(res.success)
    if restart:
        res2 = run(res.x)
        iterations += int(res2.nit)
        # a restart that cannot improve on the incumbent confirms a stationary point,
        # even when L-BFGS-B reports a line-search stop
        stalled = abs(res.fun - res2.fun) <= tol * max(1.0, abs(res.fun))
        converged = bool(res2.success) or (math.isfinite(res2.fun) and stalled)
        if res2.fun <= res.fun:
            res = res2
    if not math.isfinite(res.fun):
        raise FitError("step 1 found no finite likelihood value")
    l2, s2, t2, psi, phi = from_unconstrained(res.x)
    params = RegionParams.normalized(l2, s2, t2, psi, phi)
    return Step1Fit(params, -res.fun / scale, iterations, converged, group, lik.N, counter["n"], method)


def grouped_step1(participants, region, geoms=None, **kwargs):
    """Independent Step-1 fits per site label.

    ``participants`` are :class:`ParticipantData`; ``region`` is 1 or 2.
    Geometry comes from ``geoms[site]`` when given, else from each participant.
    """
    if region not in (1, 2):
        raise DomainError("region must be 1 or 2")
    groups = {}
    for p in participants:
        groups.setdefault(p.site, []).append(p)
    if not groups:
        raise DomainError("no participants to fit")
    out = {}
    for site, members in groups.items():
        data = [p.z1 if region == 1 else p.z2 for p in members]
        if len({np.shape(z) for z in data}) != 1:
            raise DataFormatError(f"site {site!r} mixes time lengths or voxel counts")
        if geoms is not None:
            geom = geoms[site]
        else:
            geom = _participant_geoms(members, region)
        out[site] = step1_fit(data, geom, group=site, **kwargs)
    return out


def _participant_geoms(participants, region):
    gs = [p.geom1 if region == 1 else p.geom2 for p in participants]
    if any(g is None for g in gs):
        raise DomainError("participants carry no geometry; pass it explicitly")
    first = gs[0]
    if all(g is first or np.array_equal(g.coords, first.coords) for g in gs):
        return first
    return gs


def pool_theta(fit1, fit2):
    """Combine two region fits, averaging their temporal coefficients."""
    if not (fit1.converged and fit2.converged):
        warnings.warn("pooling a step-1 fit that did not converge", RuntimeWarning, stacklevel=2)
    return PooledTheta(fit1.params, fit2.params, 0.5 * (fit1.params.phi + fit2.params.phi))


# ---------------------------------------------------------------------------
# Step 2
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Step2Stats:
    """Per-participant sufficient scalars of the summary likelihood at fixed theta."""

    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    logdet: np.ndarray
    T: np.ndarray
    X: np.ndarray
    lambda_prod: np.ndarray
    n_pairs: int
    mean_y: np.ndarray

    def subset(self, idx):
        return Step2Stats(self.a[idx], self.b[idx], self.q[idx], self.logdet[idx], self.T[idx],
                          self.X[idx], self.lambda_prod[idx], self.n_pairs, self.mean_y[idx])

    @classmethod
    def concat(cls, parts):
        """Join stats computed for disjoint participant groups (e.g. per-site theta)."""
        parts = list(parts)
        if len({p.n_pairs for p in parts}) != 1:
            raise DomainError("all groups must have the same voxel-pair count")

        def cat(name):
            return np.concatenate([getattr(p, name) for p in parts])

        return cls(cat("a"), cat("b"), cat("q"), cat("logdet"), cat("T"),
                   np.vstack([p.X for p in parts]), cat("lambda_prod"), parts[0].n_pairs, cat("mean_y"))


@dataclass(frozen=True, eq=False)
class FitResult:
    beta_hat: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    loglik: float
    n_boot: int
    converged: bool
    iterations: int = 0
    theta: PooledTheta = None
    boot_failures: int = 0


def _geom_list(g, N):
    if isinstance(g, RegionGeometry):
        return [g]
    g = list(g)
    if len(g) != N:
        raise DomainError("need one geometry, or one per participant")
    return g


def _whitening(params, geoms):
    R = np.array([exp_spatial_corr(g.pairwise_dist, params.psi) for g in geoms])
    return region_whitening(params, R)


def step2_stats(summaries, covariates, theta, geoms):
    """Precompute ``a = y'O^-1 y``, ``b = 1'O^-1 y``, ``q = 1'O^-1 1`` and ``log|O|``."""
    from .simulator import as_design

    N = len(summaries)
    if N == 0:
        raise DomainError("step 2 needs at least one participant")
    X = as_design(covariates)
    if X.shape[0] != N:
        raise DomainError(f"{N} summaries but {X.shape[0]} covariate rows")
    g1 = _geom_list(geoms[0], N)
    g2 = _geom_list(geoms[1], N)
    n1, n2 = g1[0].n, g2[0].n
    Y = np.empty((N, n1, n2))
    T = np.empty(N)
    for i, s in enumerate(summaries):
        if not isinstance(s, CorrSummary):
            raise DomainError("summaries must be CorrSummary objects")
        if s.y.size != n1 * n2:
            raise DataFormatError(f"participant {i}: summary length {s.y.size} != {n1}*{n2}")
        Y[i] = s.y.reshape(n1, n2)
        T[i] = s.T
    w1 = _whitening(theta.region1, g1)
    w2 = _whitening(theta.region2, g2)
    kappa_cache = {}
    kappa = np.array([kappa_cache.setdefault(t, theta.kappa(int(t))) for t in T])
    a, b, q, ld = omega_stats(Y, w1, w2, kappa)
    return Step2Stats(a, b, q, ld, T, X, np.full(N, theta.lambda_prod), n1 * n2, Y.mean(axis=(1, 2)))


def _step2_nll(beta, st, want_grad):
    eta = st.X @ beta
    rho = np.tanh(0.5 * eta)
    mu = rho * st.lambda_prod
    s = 1.0 + mu * mu * st.q
    B = st.b - mu * st.q
    A = st.a - 2.0 * mu * st.b + mu * mu * st.q
    quad = A - mu * mu * B * B / s
    n = st.n_pairs
    f = 0.5 * (n * LOG_2PI - n * np.log(st.T) + st.logdet + np.log(s) + st.T * quad)
    total = float(np.sum(f))
    if not want_grad:
        return total
    dq = -2.0 * B - (2.0 * mu * B * B - 2.0 * mu * mu * B * st.q) / s + 2.0 * mu ** 3 * B * B * st.q / s ** 2
    dmu = 0.5 * (2.0 * mu * st.q / s + st.T * dq)
    deta = dmu * st.lambda_prod * 0.5 * (1.0 - rho * rho)
    return total, st.X.T @ deta


def step2_loglik(beta, stats):
    """Summary log-likelihood at ``beta`` through the rank-one scalars."""
    return -_step2_nll(np.asarray(beta, dtype=float), stats, False)


def step2_loglik_dense(beta, summaries, covariates, theta, geoms):
    """Same likelihood evaluated with a dense Cholesky per participant (reference path)."""
    from .simulator import as_design

    X = as_design(covariates)
    N = len(summaries)
    g1, g2 = _geom_list(geoms[0], N), _geom_list(geoms[1], N)
    lp = theta.lambda_prod
    total = 0.0
    for i, s in enumerate(summaries):
        om = omega(theta, g1[0 if len(g1) == 1 else i], g2[0 if len(g2) == 1 else i], s.T).matrix
        mu = math.tanh(0.5 * float(X[i] @ beta)) * lp
        cov = DenseSPD((mu * mu + om) / s.T, check=False)
        r = s.y - mu
        total += -0.5 * (r.size * LOG_2PI + cov.logdet() + float(r @ cov.solve(r)))
    return total


def univariate_init(stats):
    """OLS on ``2 atanh(mean(Y_i) / (lambda1 lambda2))`` with the ratio clamped inside (-1, 1)."""
    r = np.clip(stats.mean_y / stats.lambda_prod, -1.0 + RHO_CLAMP, 1.0 - RHO_CLAMP)
    beta, *_ = np.linalg.lstsq(stats.X, 2.0 * np.arctanh(r), rcond=None)
    return beta


def _fit_beta(stats, init, gtol=1e-8, max_iter=500):
    init = np.asarray(init, dtype=float)
    f0 = _step2_nll(init, stats, False)
    scale = 1.0 / stats.X.shape[0]
    res = minimize(lambda b: tuple(v * scale for v in _step2_nll(b, stats, True)), init, jac=True,
                   method="BFGS", options={"gtol": gtol, "maxiter": max_iter})
    beta, fval = res.x, res.fun / scale
    if not (np.all(np.isfinite(beta)) and math.isfinite(fval)) or fval > f0:
        beta, fval = init, f0
    return beta, -fval, bool(res.success), int(res.nit)


def step2_fit(summaries, covariates, theta, geoms, init_beta=None, stats=None):
    """Maximize the summary likelihood over ``beta`` with ``theta`` held fixed.

    Returns a :class:`FitResult` without standard errors (``se`` is NaN);
    see :func:`bootstrap_se` and :func:`two_step_fit`.
    """
    if stats is None:
        stats = step2_stats(summaries, covariates, theta, geoms)
    if init_beta is None:
        init_beta = univariate_init(stats)
    beta, ll, ok, nit = _fit_beta(stats, init_beta)
    nan = np.full(beta.size, np.nan)
    return FitResult(beta, nan, nan.copy(), nan.copy(), ll, 0, ok, nit, theta)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BootstrapDraws:
    draws: np.ndarray
    failures: int

    @property
    def se(self):
        return np.std(self.draws, axis=0, ddof=1)


def bootstrap_draws(stats, B, rng, init_beta, min_success=0.9):
    """Refit Step 2 on ``B`` participant resamples of precomputed scalars."""
    if B < 2:
        raise DomainError("bootstrap needs B >= 2")
    N = stats.X.shape[0]
    draws, failures = [], 0
    for _ in range(B):
        idx = rng.integers(0, N, N)
        sub = stats.subset(idx)
        try:
            if np.linalg.matrix_rank(sub.X) < sub.X.shape[1]:
                raise FitError("rank-deficient resample")
            beta, _, ok, _ = _fit_beta(sub, init_beta)
            if not ok and not np.all(np.isfinite(beta)):
                raise FitError("resample fit failed")
            draws.append(beta)
        except (FitError, np.linalg.LinAlgError, FloatingPointError):
            failures += 1
    if len(draws) < max(2, math.ceil(min_success * B)):
        raise FitError(f"only {len(draws)} of {B} bootstrap resamples succeeded")
    out = BootstrapDraws(np.array(draws), failures)
    if np.any(out.se == 0):
        raise FitError("bootstrap draws do not vary; the step-2 likelihood is flat "
                       "(check the step-1 estimates, e.g. lambda2 near 0)")
    return out


def bootstrap_se(summaries, covariates, theta, geoms, B=100, rng=None, init_beta=None,
                 min_success=0.9, stats=None):
    """Participant-bootstrap standard errors of ``beta`` with ``theta`` held fixed."""
    if rng is None:
        rng = np.random.default_rng()
    if stats is None:
        stats = step2_stats(summaries, covariates, theta, geoms)
    if init_beta is None:
        init_beta = _fit_beta(stats, univariate_init(stats))[0]
    return bootstrap_draws(stats, B, rng, init_beta, min_success).se


def wald_ci(beta_hat, se, level=0.95):
    """Normal-approximation interval ``beta_hat -/+ z se``."""
    se = np.asarray(se, dtype=float)
    if not 0 < level < 1:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    if np.any(~(se > 0)):
        raise DomainError("standard errors must be positive")
    z = float(norm.ppf(0.5 + 0.5 * level))
    b = np.asarray(beta_hat, dtype=float)
    return b - z * se, b + z * se


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

def summarize(participants):
    """Correlation summaries, design matrix and geometries from participant data."""
    sums = [empirical_corr(p.z1, p.z2) for p in participants]
    from .simulator import as_design

    X = as_design([p.covariates for p in participants])
    geoms = (_participant_geoms(participants, 1), _participant_geoms(participants, 2))
    return sums, X, geoms


@dataclass(frozen=True, eq=False)
class TwoStepResult:
    fit: FitResult
    step1: tuple
    theta: PooledTheta
    stats: Step2Stats = field(repr=False, default=None)
    timings: dict = field(default_factory=dict)


def refit_bootstrap_draws(participants, B, rng, fit, min_success=0.9, step1_method="lbfgs"):
    """Bootstrap that reruns Step 1 on every resample, started from the full-data fit.

    Much slower than :func:`bootstrap_draws`, but the spread includes the
    variability of the covariance estimates.
    """
    if B < 2:
        raise DomainError("bootstrap needs B >= 2")
    N = len(participants)
    r1, r2 = fit.theta.region1, fit.theta.region2
    draws, failures = [], 0
    for _ in range(B):
        idx = rng.integers(0, N, N)
        sub = [participants[i] for i in idx]
        try:
            res = two_step_fit(sub, B=0, step1_method=step1_method, step1_init=(r1, r2))
            if not np.all(np.isfinite(res.fit.beta_hat)):
                raise FitError("resample fit failed")
            draws.append(res.fit.beta_hat)
        except (FitError, DomainError, np.linalg.LinAlgError, FloatingPointError):
            failures += 1
    if len(draws) < max(2, math.ceil(min_success * B)):
        raise FitError(f"only {len(draws)} of {B} bootstrap resamples succeeded")
    return BootstrapDraws(np.array(draws), failures)


def two_step_fit(participants, B=100, rng=None, step1_method="lbfgs", level=0.95,
                 min_success=0.9, step1_init=None, refit_step1=False):
    """Step 1 on each region, pooling, Step 2, bootstrap SEs and Wald intervals.

    By default the bootstrap holds the Step-1 estimates fixed; ``refit_step1``
    reruns Step 1 inside every resample instead.
    """
    if len(participants) == 0:
        raise DomainError("no participants")
    geoms = (_participant_geoms(participants, 1), _participant_geoms(participants, 2))
    init1, init2 = step1_init if step1_init is not None else (None, None)
    t0 = time.perf_counter()
    f1 = step1_fit([p.z1 for p in participants], geoms[0], init=init1, method=step1_method)
    f2 = step1_fit([p.z2 for p in participants], geoms[1], init=init2, method=step1_method)
    theta = pool_theta(f1, f2)
    t1 = time.perf_counter()
    sums, X, _ = summarize(participants)
    stats = step2_stats(sums, X, theta, geoms)
    fit = step2_fit(sums, X, theta, geoms, stats=stats)
    t2 = time.perf_counter()
    timings = {"step1": t1 - t0, "step2": t2 - t1, "bootstrap": 0.0}
    if B > 0:
        rng = rng if rng is not None else np.random.default_rng()
        if refit_step1:
            bd = refit_bootstrap_draws(participants, B, rng, fit, min_success, step1_method)
        else:
            bd = bootstrap_draws(stats, B, rng, fit.beta_hat, min_success)
        se = bd.se
        lo, hi = wald_ci(fit.beta_hat, se, level)
        fit = FitResult(fit.beta_hat, se, lo, hi, fit.loglik, len(bd.draws), fit.converged,
                        fit.iterations, theta, bd.failures)
        timings["bootstrap"] = time.perf_counter() - t2
    return TwoStepResult(fit, (f1, f2), theta, stats, timings)
