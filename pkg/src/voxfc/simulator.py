"""Synthetic participants under the hierarchical ROI + voxel + noise model.

Each participant's series is the sum of a ROI-level signal shared by all
voxels of a region (correlated across the two regions with ``rho_i``), a
separable spatiotemporal Gaussian process (exponential in space, AR(1) in
time), and white noise; the result is centered and scaled per region.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import kernels
from .covkernels import RegionGeometry, RegionParams, cholesky_lower, exp_spatial_corr
from .errors import DomainError

UNIT_BOX = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
FAR_BOX = ((2.0, 2.0, 2.0), (3.0, 3.0, 3.0))
PHI_CLAMP = 0.99
HETEROGENEITY_TARGETS = ("psi1", "psi2", "phi", "sigma2s", "tau2s")

# spawn-key tags for the per-replicate substreams
STREAM_PARTICIPANT = 0
STREAM_COVARIATES = 1
STREAM_BOOTSTRAP = 2
STREAM_BOOTSTRAP_UNIVARIATE = 3


@dataclass(frozen=True, eq=False)
class CovariateRow:
    """One participant's covariate vector; ``x[0] == 1`` by convention (intercept)."""

    x: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        if x.size == 0 or not np.all(np.isfinite(x)):
            raise DomainError("covariate row must be a non-empty finite vector")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def p(self):
        return self.x.size


def as_design(rows):
    """Stack CovariateRow objects or plain vectors into an ``N x p`` matrix."""
    X = np.array([r.x if isinstance(r, CovariateRow) else np.asarray(r, dtype=float) for r in rows],
                 dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise DomainError("covariates must form a finite N x p matrix")
    return X


@dataclass(frozen=True)
class SeedSpec:
    """Master seed; substreams are keyed by integer tuples such as ``(r, 0, i)``."""

    master_seed: int

    def rng(self, *key):
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=tuple(int(k) for k in key))
        return np.random.default_rng(ss)


@dataclass(frozen=True, eq=False)
class TrueModel:
    """Generative truth for one study.

    ``geom1`` / ``geom2`` fix the voxel layout for every participant; leave
    them ``None`` to draw fresh uniform locations per participant inside
    ``box1`` / ``box2`` with ``n1`` / ``n2`` voxels.
    """

    region1: RegionParams
    region2: RegionParams
    beta: np.ndarray
    T: int
    n1: int = 10
    n2: int = 10
    geom1: RegionGeometry = None
    geom2: RegionGeometry = None
    box1: tuple = UNIT_BOX
    box2: tuple = FAR_BOX

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        if not np.all(np.isfinite(beta)):
            raise DomainError("beta must be finite")
        object.__setattr__(self, "beta", beta)
        if self.region1.phi != self.region2.phi:
            raise DomainError("both regions must share one temporal coefficient phi")
        if self.region1.phi >= 1:
            raise DomainError("simulation needs phi < 1 (stationary AR(1))")
        if int(self.T) < 1:
            raise DomainError("T must be positive")
        if self.geom1 is not None:
            object.__setattr__(self, "n1", self.geom1.n)
        if self.geom2 is not None:
            object.__setattr__(self, "n2", self.geom2.n)

    @property
    def phi(self):
        return self.region1.phi

    @property
    def shared_geometry(self):
        return self.geom1 is not None and self.geom2 is not None


@dataclass(frozen=True)
class HeterogeneitySpec:
    alpha: float = 0.0
    targets: frozenset = field(default_factory=lambda: frozenset(HETEROGENEITY_TARGETS))

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise DomainError(f"alpha must be a nonnegative real, got {self.alpha}")
        t = frozenset(self.targets)
        unknown = t - set(HETEROGENEITY_TARGETS)
        if unknown:
            raise DomainError(f"unknown heterogeneity targets: {sorted(unknown)}")
        object.__setattr__(self, "targets", t)


@dataclass(eq=False)
class ParticipantData:
    id: int
    z1: np.ndarray
    z2: np.ndarray
    covariates: np.ndarray
    site: str = None
    geom1: RegionGeometry = None
    geom2: RegionGeometry = None

    @property
    def T(self):
        return self.z1.shape[0]


def rho_from_covariates(x, beta):
    """Connectivity ``2 * expit(x . beta) - 1``, computed as ``tanh(x . beta / 2)``."""
    if isinstance(x, CovariateRow):
        x = x.x
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if x.shape[-1] != beta.shape[-1]:
        raise DomainError(f"covariate length {x.shape[-1]} does not match beta length {beta.shape[-1]}")
    return np.tanh((x @ beta) / 2.0)


def connectivity_logit(rho):
    """Inverse link: ``logit((rho + 1) / 2) = 2 atanh(rho)``."""
    return 2.0 * np.arctanh(rho)


def sample_voxels(n, box, rng):
    lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (3,)) for b in box)
    if n < 1:
        raise DomainError("need at least one voxel")
    if np.any(hi <= lo):
        raise DomainError(f"degenerate sampling box {box!r}")
    pts = lo + (hi - lo) * rng.random((n, 3))
    while n > 1 and len({tuple(p) for p in pts}) < n:
        pts = lo + (hi - lo) * rng.random((n, 3))
    return RegionGeometry(pts)


def apply_heterogeneity(model, spec, rng):
    """Scale targeted parameters by independent Gamma(1/alpha, alpha) draws.

    Variances are renormalized to sum to one after scaling and phi is clamped
    into ``(0, 0.99]``. ``alpha == 0`` returns ``model`` unchanged.
    """
    if spec is None or spec.alpha == 0:
        return model
    a = spec.alpha

    def g():
        return rng.gamma(1.0 / a, a)

    t = spec.targets
    psi1 = model.region1.psi * (g() if "psi1" in t else 1.0)
    psi2 = model.region2.psi * (g() if "psi2" in t else 1.0)
    phi = model.phi * (g() if "phi" in t else 1.0)
    phi = min(max(phi, 1e-6), PHI_CLAMP)
    s1 = model.region1.sigma2 * (g() if "sigma2s" in t else 1.0)
    s2 = model.region2.sigma2 * (g() if "sigma2s" in t else 1.0)
    t1 = model.region1.tau2 * (g() if "tau2s" in t else 1.0)
    t2 = model.region2.tau2 * (g() if "tau2s" in t else 1.0)
    r1 = RegionParams.normalized(model.region1.lambda2, s1, t1, psi1, phi)
    r2 = RegionParams.normalized(model.region2.lambda2, s2, t2, psi2, phi)
    return replace(model, region1=r1, region2=r2)


def make_scenario_covariates(scenario, rng, N=None):
    """Design rows: ``[1, Bern(.5)]`` or, for ``realistic``, ``[1, Bern(.5), U(0,1), Bern(.5)]``."""
    design = getattr(scenario, "covariate_design", scenario)
    if N is None:
        N = getattr(scenario, "N", None)
    if N is None:
        raise DomainError("number of participants N is required")
    if design == "binary":
        return np.column_stack([np.ones(N), rng.binomial(1, 0.5, N)]).astype(float)
    if design == "realistic":
        return np.column_stack([np.ones(N), rng.binomial(1, 0.5, N), rng.random(N),
                                rng.binomial(1, 0.5, N)]).astype(float)
    raise DomainError(f"unknown covariate design {design!r}")


def standardize(z):
    """Center and scale to zero mean and unit variance over all entries."""
    z = z - z.mean()
    return z / z.std()


@dataclass
class _Draws:
    model: TrueModel
    geom1: RegionGeometry
    geom2: RegionGeometry
    a: np.ndarray       # (T, 2)
    eps1: np.ndarray    # spatially correlated innovations (T, n1)
    eps2: np.ndarray
    e1: np.ndarray      # white noise (T, n1)
    e2: np.ndarray


def _draw(model, x, rng, heterogeneity):
    m = apply_heterogeneity(model, heterogeneity, rng)
    g1 = m.geom1 if m.geom1 is not None else sample_voxels(m.n1, m.box1, rng)
    g2 = m.geom2 if m.geom2 is not None else sample_voxels(m.n2, m.box2, rng)
    rho = float(rho_from_covariates(x, m.beta))
    T = int(m.T)
    xi = rng.standard_normal((T, 2))
    l1, l2 = math.sqrt(m.region1.lambda2), math.sqrt(m.region2.lambda2)
    a = np.column_stack([l1 * xi[:, 0], l2 * (rho * xi[:, 0] + math.sqrt(1.0 - rho * rho) * xi[:, 1])])
    L1 = cholesky_lower(exp_spatial_corr(g1.pairwise_dist, m.region1.psi))
    L2 = cholesky_lower(exp_spatial_corr(g2.pairwise_dist, m.region2.psi))
    eps1 = rng.standard_normal((T, g1.n)) @ L1.T
    eps2 = rng.standard_normal((T, g2.n)) @ L2.T
    e1 = rng.standard_normal((T, g1.n))
    e2 = rng.standard_normal((T, g2.n))
    return _Draws(m, g1, g2, a, eps1, eps2, e1, e2)


def _assemble(draws, standardize_data):
    phi = np.array([d.model.phi for d in draws])
    U1 = kernels.ar1_filter(np.ascontiguousarray(np.stack([d.eps1 for d in draws])), phi)
    U2 = kernels.ar1_filter(np.ascontiguousarray(np.stack([d.eps2 for d in draws])), phi)
    out = []
    for d, u1, u2 in zip(draws, U1, U2):
        r1, r2 = d.model.region1, d.model.region2
        z1 = d.a[:, :1] + math.sqrt(r1.sigma2) * u1 + math.sqrt(r1.tau2) * d.e1
        z2 = d.a[:, 1:] + math.sqrt(r2.sigma2) * u2 + math.sqrt(r2.tau2) * d.e2
        if standardize_data:
            z1, z2 = standardize(z1), standardize(z2)
        out.append((z1, z2))
    return out


def simulate_participant(model, x, rng, pid=0, heterogeneity=None, standardize_data=True, site=None):
    """One participant drawn from ``model`` with covariate row ``x``."""
    x = x.x if isinstance(x, CovariateRow) else np.asarray(x, dtype=float)
    d = _draw(model, x, rng, heterogeneity)
    (z1, z2), = _assemble([d], standardize_data)
    return ParticipantData(pid, z1, z2, x, site, d.geom1, d.geom2)


def simulate_dataset(model, X, seed, replicate=0, heterogeneity=None, standardize_data=True,
                     chunk=2000):
    """Participants ``0..N-1`` with rows of ``X``, each from substream ``(replicate, 0, i)``.

    Output is bit-identical to calling :func:`simulate_participant` with the
    same substreams one by one.
    """
    X = as_design(X)
    out = []
    for start in range(0, X.shape[0], chunk):
        idx = range(start, min(start + chunk, X.shape[0]))
        draws = [_draw(model, X[i], seed.rng(replicate, STREAM_PARTICIPANT, i), heterogeneity)
                 for i in idx]
        for i, d, (z1, z2) in zip(idx, draws, _assemble(draws, standardize_data)):
            out.append(ParticipantData(i, z1, z2, X[i], None, d.geom1, d.geom2))
    return out
