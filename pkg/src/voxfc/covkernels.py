"""Spatial and temporal correlation kernels and the within-region covariance.

Vectorized region data use time-outer / voxel-inner ordering: the entry for
time ``t`` and voxel ``j`` of a ``T x n`` matrix ``Z`` sits at ``t * n + j`` of
``Z.ravel()``. Every dense Kronecker construction in the package follows it.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
from scipy.linalg import cho_solve, lapack, toeplitz
from scipy.spatial.distance import pdist, squareform

from .errors import DomainError, NotPDError, SingularityError, SizeError

DEFAULT_REGION_COV_CAP = 6000
VARIANCE_SUM_TOL = 1e-10


@dataclass(frozen=True)
class VoxelLocation:
    coords: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.coords)
        if len(c) != 3 or not all(math.isfinite(v) for v in c):
            raise DomainError(f"voxel location needs 3 finite coordinates, got {self.coords!r}")
        object.__setattr__(self, "coords", c)


@dataclass(frozen=True)
class RegionParams:
    """Covariance parameters of one region.

    ``lambda2``, ``sigma2`` and ``tau2`` are the ROI-signal, spatiotemporal and
    noise variances and must sum to one. ``psi`` is the exponential spatial
    range and ``phi`` the AR(1) coefficient.
    """

    lambda2: float
    sigma2: float
    tau2: float
    psi: float
    phi: float

    def __post_init__(self):
        vals = [self.lambda2, self.sigma2, self.tau2, self.psi, self.phi]
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite region parameters: {self}")
        if min(self.lambda2, self.sigma2, self.tau2) <= 0:
            raise DomainError(f"variance components must be positive: {self}")
        total = self.lambda2 + self.sigma2 + self.tau2
        if abs(total - 1.0) > VARIANCE_SUM_TOL:
            raise DomainError(f"lambda2 + sigma2 + tau2 must equal 1, got {total!r}")
        if self.psi <= 0:
            raise DomainError(f"psi must be positive, got {self.psi}")
        if not 0 < self.phi <= 1:
            raise DomainError(f"phi must lie in (0, 1], got {self.phi}")

    @classmethod
    def normalized(cls, lambda2, sigma2, tau2, psi, phi):
        """Build params after rescaling the variance triple to sum to one."""
        total = float(lambda2) + float(sigma2) + float(tau2)
        return cls(float(lambda2) / total, float(sigma2) / total, float(tau2) / total, float(psi), float(phi))

    def as_dict(self):
        return {"lambda2": self.lambda2, "sigma2": self.sigma2, "tau2": self.tau2,
                "psi": self.psi, "phi": self.phi}


@dataclass(frozen=True, eq=False)
class RegionGeometry:
    """Ordered voxel coordinates of one region, shape ``(n, 3)``."""

    coords: np.ndarray
    ids: tuple = field(default=None)

    def __post_init__(self):
        c = np.array(self.coords, dtype=float, copy=True)
        if c.ndim == 1 and c.size == 3:
            c = c.reshape(1, 3)
        if c.ndim != 2 or c.shape[1] != 3 or c.shape[0] < 1:
            raise DomainError(f"voxel coordinates must have shape (n, 3), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DomainError("voxel coordinates must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        if c.shape[0] > 1 and np.min(pdist(c)) == 0.0:
            dup = _first_duplicate(c)
            raise SingularityError(f"duplicate voxel coordinates at rows {dup}: spatial "
                                   "correlation matrix would be singular")
        if self.ids is not None:
            ids = tuple(str(v) for v in self.ids)
            if len(ids) != c.shape[0]:
                raise DomainError("number of voxel ids does not match number of coordinates")
            object.__setattr__(self, "ids", ids)

    @classmethod
    def from_locations(cls, voxels):
        return cls(np.array([v.coords for v in voxels]))

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def voxels(self):
        return [VoxelLocation(tuple(row)) for row in self.coords]

    @cached_property
    def pairwise_dist(self):
        d = squareform(pdist(self.coords)) if self.n > 1 else np.zeros((1, 1))
        d.setflags(write=False)
        return d


def _first_duplicate(c):
    seen = {}
    for i, row in enumerate(map(tuple, c)):
        if row in seen:
            return (seen[row], i)
        seen[row] = i
    return None


class DenseSPD:
    """Symmetric positive-definite matrix with a lazily computed Cholesky factor."""

    def __init__(self, matrix, check=True):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError(f"expected a square matrix, got shape {m.shape}")
        if check:
            scale = max(np.max(np.abs(m)), 1.0)
            if np.max(np.abs(m - m.T)) > 1e-12 * scale:
                raise DomainError("matrix is not symmetric")
        self.matrix = m
        self._chol = None

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def chol(self):
        """Lower-triangular Cholesky factor; raises :class:`NotPDError`."""
        if self._chol is None:
            self._chol = cholesky_lower(self.matrix)
        return self._chol

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def solve(self, b):
        return cho_solve((self.chol, True), b, check_finite=False)


def cholesky_lower(a, jitter=0.0):
    """Lower Cholesky factor; failure raises NotPDError with the 0-based pivot."""
    a = np.array(a, dtype=float, copy=True)
    if jitter:
        a[np.diag_indices_from(a)] += jitter
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=1)
    if info > 0:
        raise NotPDError(info - 1)
    if info < 0:
        raise DomainError(f"illegal argument {-info} passed to dpotrf")
    return c


def exp_spatial_corr(d, psi):
    """Exponential correlation ``exp(-d / psi)``; accepts scalars or arrays."""
    d = np.asarray(d, dtype=float)
    if not np.isfinite(psi) or psi <= 0:
        raise DomainError(f"psi must be positive and finite, got {psi}")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise DomainError("distances must be finite and nonnegative")
    out = np.exp(-d / psi)
    return float(out) if out.ndim == 0 else out


def ar1_temporal_corr(lag, phi):
    lag = np.asarray(lag)
    if not 0 < phi <= 1:
        raise DomainError(f"phi must lie in (0, 1], got {phi}")
    if np.any(lag < 0):
        raise DomainError("lag must be nonnegative")
    out = np.power(float(phi), lag)
    return float(out) if out.ndim == 0 else out


def ar1_corr_matrix(phi, T):
    """``T x T`` AR(1) correlation matrix ``phi**|t - t'|``."""
    return toeplitz(np.power(float(phi), np.arange(T)))


def spatial_corr_matrix(geom, psi):
    return DenseSPD(exp_spatial_corr(geom.pairwise_dist, psi), check=False)


def region_cov(params, geom, T, cap=DEFAULT_REGION_COV_CAP):
    """Dense ``nT x nT`` covariance of one region's vectorized time series.

    ``lambda2 * kron(I_T, J_n) + sigma2 * kron(R_t, R_s) + tau2 * I``.
    """
    if T < 1:
        raise DomainError(f"T must be a positive integer, got {T}")
    n = geom.n
    size = n * T
    if size > cap:
        raise SizeError(f"region covariance of size {size} exceeds cap {cap}")
    rs = exp_spatial_corr(geom.pairwise_dist, params.psi)
    rt = ar1_corr_matrix(params.phi, T)
    m = params.lambda2 * np.kron(np.eye(T), np.ones((n, n)))
    m += params.sigma2 * np.kron(rt, rs)
    m[np.diag_indices(size)] += params.tau2
    return DenseSPD(m, check=False)


def chol_solve_logdet(a, b, jitter=0.0):
    """Solve ``A X = B`` through a Cholesky factor and return ``(X, log|A|)``.

    ``jitter`` (default 0) is added to the diagonal before factorizing; it is
    an opt-in escape hatch for user data, never applied silently.
    """
    mat = a.matrix if isinstance(a, DenseSPD) else np.asarray(a, dtype=float)
    if jitter == 0.0 and isinstance(a, DenseSPD):
        chol = a.chol
    else:
        chol = cholesky_lower(mat, jitter=jitter)
    x = cho_solve((chol, True), b, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return x, logdet
