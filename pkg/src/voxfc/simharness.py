"""Monte-Carlo replication of simulation scenarios and their summary tables.

Each replicate draws its own covariates and participants from seed
substreams keyed by the replicate index, so results do not depend on how
replicates are scheduled across worker processes.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import math
import os
import time
import warnings

import numpy as np
from scipy.stats import norm
from threadpoolctl import threadpool_limits

from .baselines import full_mle_fit, univariate_fit
from .covkernels import RegionParams
from .errors import DomainError, FitError, VoxfcError
from .estimator import two_step_fit
from .simulator import (STREAM_BOOTSTRAP, STREAM_BOOTSTRAP_UNIVARIATE, STREAM_COVARIATES,
                        HeterogeneitySpec, SeedSpec, TrueModel, make_scenario_covariates,
                        simulate_dataset)

METHODS = ("proposed", "univariate", "full_mle")
FAILURE_WARN_FRACTION = 0.02
BASELINE_REGION1 = RegionParams(0.4, 0.3, 0.3, 1.0, 0.3)
BASELINE_REGION2 = RegionParams(0.4, 0.3, 0.3, 5.0, 0.3)


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    N: int
    n1: int
    n2: int
    T: int
    beta: tuple = (0.5, 0.5)
    region1: RegionParams = BASELINE_REGION1
    region2: RegionParams = BASELINE_REGION2
    covariate_design: str = "binary"
    heterogeneity: HeterogeneitySpec = field(default_factory=HeterogeneitySpec)
    replicates: int = 500
    n_boot: int = 100
    methods: tuple = ("proposed", "univariate")
    seed: SeedSpec = SeedSpec(20240601)
    step1_method: str = "lbfgs"
    # generated series already have unit marginal variance; per-participant
    # rescaling biases Step 1 (see README)
    standardize: bool = False

    def __post_init__(self):
        if self.replicates < 1:
            raise DomainError("replicates must be at least 1")
        if min(self.N, self.n1, self.n2, self.T) < 1:
            raise DomainError("N, n1, n2 and T must be positive")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise DomainError(f"unknown methods {sorted(bad)}")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "methods", tuple(self.methods))

    @property
    def truth(self):
        return TrueModel(self.region1, self.region2, np.array(self.beta), self.T, self.n1, self.n2)

    @property
    def p(self):
        return len(self.beta)


def _preset(name, N, n, T, **kw):
    return ScenarioConfig(name, N, n, n, T, **kw)


PRESETS = {
    "baseline": _preset("baseline", 1000, 10, 100),
    "n500": _preset("n500", 500, 10, 100),
    "n300": _preset("n300", 300, 10, 100),
    "longT": _preset("longT", 1000, 10, 200),
    "morevox": _preset("morevox", 1000, 30, 100),
    "realistic": _preset("realistic", 500, 25, 50, beta=(0.5, 0.5, 0.5, 0.5),
                         covariate_design="realistic"),
    "hetero005": _preset("hetero005", 1000, 10, 100, heterogeneity=HeterogeneitySpec(0.05)),
    "hetero01": _preset("hetero01", 1000, 10, 100, heterogeneity=HeterogeneitySpec(0.1)),
    "hetero02": _preset("hetero02", 1000, 10, 100, heterogeneity=HeterogeneitySpec(0.2)),
}
TABLE_1B_SCENARIOS = ("baseline", "n500", "n300", "longT", "morevox")


def preset(name, **overrides):
    if name not in PRESETS:
        raise DomainError(f"unknown scenario preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides) if overrides else PRESETS[name]


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    method: str
    parameter: str
    bias: float
    se_bias: float
    se: float
    rmse: float
    coverage: float
    mean_runtime_step1: float = float("nan")
    mean_runtime_step2: float = float("nan")
    n_replicates: int = 0
    n_failed: int = 0
    alpha: float = 0.0


def compute_metrics(estimates, ses, truth, level=0.95):
    """Bias, its standard error, mean SE, RMSE and Wald coverage per coefficient."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    se = np.atleast_2d(np.asarray(ses, dtype=float))
    truth = np.asarray(truth, dtype=float).ravel()
    if est.shape != se.shape or est.shape[1] != truth.size:
        raise DomainError(f"shape mismatch: estimates {est.shape}, ses {se.shape}, truth {truth.shape}")
    R = est.shape[0]
    err = est - truth
    z = float(norm.ppf(0.5 + 0.5 * level))
    out = []
    for j in range(truth.size):
        e = err[:, j]
        out.append({
            "bias": float(np.mean(e)),
            "se_bias": float(np.std(est[:, j], ddof=1) / math.sqrt(R)) if R >= 2 else float("nan"),
            "se": float(np.mean(se[:, j])),
            "rmse": float(math.sqrt(np.mean(e * e))),
            "coverage": float(np.mean(np.abs(e) <= z * se[:, j])) if np.all(np.isfinite(se[:, j]))
            else float("nan"),
        })
    return out


@dataclass(frozen=True, eq=False)
class MethodOutcome:
    beta: np.ndarray
    se: np.ndarray
    runtime_step1: float = float("nan")
    runtime_step2: float = float("nan")
    error: str = None


@dataclass(frozen=True, eq=False)
class ReplicateRecord:
    index: int
    outcomes: dict


def run_replicate(cfg, r):
    """Simulate and fit replicate ``r`` of ``cfg`` with every requested method."""
    seed = cfg.seed
    X = make_scenario_covariates(cfg, seed.rng(r, STREAM_COVARIATES))
    data = simulate_dataset(cfg.truth, X, seed, replicate=r, heterogeneity=cfg.heterogeneity,
                            standardize_data=cfg.standardize)
    p = cfg.p
    nan = np.full(p, np.nan)
    outcomes = {}
    for method in cfg.methods:
        try:
            if method == "proposed":
                res = two_step_fit(data, B=cfg.n_boot, rng=seed.rng(r, STREAM_BOOTSTRAP),
                                   step1_method=cfg.step1_method)
                se = res.fit.se if cfg.n_boot else nan
                outcomes[method] = MethodOutcome(res.fit.beta_hat, se, res.timings["step1"],
                                                 res.timings["step2"])
            elif method == "univariate":
                t0 = time.perf_counter()
                lam = (math.sqrt(cfg.region1.lambda2), math.sqrt(cfg.region2.lambda2))
                u = univariate_fit(data, *lam, B=cfg.n_boot, rng=seed.rng(r, STREAM_BOOTSTRAP_UNIVARIATE))
                dt = time.perf_counter() - t0
                outcomes[method] = MethodOutcome(u.beta_hat, u.se_analytic, float("nan"), dt)
                if u.se_boot is not None:
                    outcomes["univariate_boot"] = MethodOutcome(u.beta_hat, u.se_boot, float("nan"), dt)
            elif method == "full_mle":
                t0 = time.perf_counter()
                f = full_mle_fit(data)
                outcomes[method] = MethodOutcome(f.beta_hat, nan, float("nan"), time.perf_counter() - t0)
        except (VoxfcError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            outcomes[method] = MethodOutcome(nan, nan, error=f"{type(exc).__name__}: {exc}")
    return ReplicateRecord(r, outcomes)


def _worker_init():
    threadpool_limits(1)


def _run_one(args):
    cfg, r = args
    return run_replicate(cfg, r)


def run_replicates(cfg, threads=1):
    """All replicate records of ``cfg``, ordered by replicate index."""
    jobs = [(cfg, r) for r in range(cfg.replicates)]
    if threads is None:
        threads = os.cpu_count() or 1
    if threads <= 1:
        # same BLAS threading as the workers, so results match bit for bit
        with threadpool_limits(1):
            return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads, initializer=_worker_init) as ex:
        return list(ex.map(_run_one, jobs))


def aggregate(cfg, records, level=0.95):
    """Reduce replicate records (in index order) to one MetricsRow per method and coefficient."""
    records = sorted(records, key=lambda rec: rec.index)
    names = [m for m in ("proposed", "univariate", "univariate_boot", "full_mle")
             if any(m in rec.outcomes for rec in records)]
    rows = []
    for method in names:
        outs = [rec.outcomes[method] for rec in records if method in rec.outcomes]
        ok = [o for o in outs if o.error is None]
        failed = len(outs) - len(ok)
        if outs and failed / len(outs) > FAILURE_WARN_FRACTION:
            warnings.warn(f"{cfg.name}/{method}: {failed} of {len(outs)} replicates failed",
                          RuntimeWarning, stacklevel=2)
        if not ok:
            continue
        metrics = compute_metrics([o.beta for o in ok], [o.se for o in ok], cfg.beta, level)
        rt1 = float(np.mean([o.runtime_step1 for o in ok]))
        rt2 = float(np.mean([o.runtime_step2 for o in ok]))
        for j, m in enumerate(metrics):
            rows.append(MetricsRow(cfg.name, method, f"beta{j}", m["bias"], m["se_bias"], m["se"],
                                   m["rmse"], m["coverage"], rt1, rt2, len(ok), failed,
                                   cfg.heterogeneity.alpha))
    return rows


def run_scenario(cfg, threads=1, level=0.95):
    return aggregate(cfg, run_replicates(cfg, threads), level)


def run_robustness_sweep(alphas, base, threads=1):
    """Metrics for ``base`` with heterogeneity scale set to each ``alpha``."""
    out = {}
    for a in alphas:
        if a < 0:
            raise DomainError("alpha must be nonnegative")
        cfg = replace(base, name=f"{base.name}_alpha{a:g}", heterogeneity=HeterogeneitySpec(float(a)))
        out[float(a)] = run_scenario(cfg, threads)
    return out


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _fmt(v, scale=1.0, digits=3):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return f"{v * scale:.{digits}f}"


def render_accuracy_table(rows, title, methods=("proposed",)):
    """Bias, SE(Bias), SE and RMSE scaled by 1e3, plus coverage."""
    head = f"{'Scenario':<12} {'Method':<16} {'Param':<6} {'Bias':>9} {'SE(Bias)':>9} {'SE':>9} {'RMSE':>9} {'Coverage':>9}"
    lines = [title, "(all but coverage scaled by 1e-3)", head, "-" * len(head)]
    for r in rows:
        if r.method not in methods:
            continue
        lines.append(f"{r.scenario:<12} {r.method:<16} {r.parameter:<6} {_fmt(r.bias, 1e3):>9} "
                     f"{_fmt(r.se_bias, 1e3):>9} {_fmt(r.se, 1e3):>9} {_fmt(r.rmse, 1e3):>9} "
                     f"{_fmt(r.coverage):>9}")
    return "\n".join(lines) + "\n"


def render_univariate_table(rows, title="Univariate method: analytic and bootstrap uncertainty"):
    by = {}
    for r in rows:
        if r.method in ("univariate", "univariate_boot"):
            by.setdefault((r.scenario, r.parameter), {})[r.method] = r
    head = (f"{'Scenario':<12} {'Param':<6} {'Bias':>8} {'SE':>8} {'SE_boot':>8} {'RMSE':>8} "
            f"{'Cover':>7} {'Cover_boot':>10}")
    lines = [title, "(bias, SE and RMSE scaled by 1e-3)", head, "-" * len(head)]
    for (sc, par), d in by.items():
        a, b = d.get("univariate"), d.get("univariate_boot")
        base = a or b
        lines.append(f"{sc:<12} {par:<6} {_fmt(base.bias, 1e3):>8} {_fmt(a.se if a else None, 1e3):>8} "
                     f"{_fmt(b.se if b else None, 1e3):>8} {_fmt(base.rmse, 1e3):>8} "
                     f"{_fmt(a.coverage if a else None):>7} {_fmt(b.coverage if b else None):>10}")
    return "\n".join(lines) + "\n"


def render_runtime_table(timings):
    """``timings`` maps scenario name to ``(mean step-1 seconds, mean step-2 seconds)``."""
    head = f"{'Scenario':<12} {'Step 1':>10} {'Step 2':>10} {'Total':>10}"
    lines = ["Average computation time (seconds)", head, "-" * len(head)]
    for name, (s1, s2) in timings.items():
        lines.append(f"{name:<12} {s1:>10.3f} {s2:>10.3f} {s1 + s2:>10.3f}")
    return "\n".join(lines) + "\n"


def render_sweep_table(sweep):
    head = f"{'alpha':>6} {'Param':<6} {'Bias':>8} {'SE':>8} {'RMSE':>8} {'Coverage':>9}"
    lines = ["Robustness to parameter heterogeneity (bias, SE, RMSE scaled by 1e-2)", head, "-" * len(head)]
    for a, rows in sweep.items():
        for r in rows:
            if r.method == "proposed":
                lines.append(f"{a:>6g} {r.parameter:<6} {_fmt(r.bias, 1e2):>8} {_fmt(r.se, 1e2):>8} "
                             f"{_fmt(r.rmse, 1e2):>8} {_fmt(r.coverage):>9}")
    return "\n".join(lines) + "\n"
