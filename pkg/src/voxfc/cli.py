"""Command-line interface: simulate datasets, fit them, reproduce simulation tables.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
from dataclasses import replace
import os
from pathlib import Path
import sys

import numpy as np

from . import io
from .errors import DataFormatError, DomainError, FitError, NotPDError, SingularityError, SizeError
from .estimator import (Step2Stats, bootstrap_draws, grouped_step1, pool_theta, step2_stats,
                        step2_fit, summarize, wald_ci)
from .baselines import univariate_fit
from .simharness import (PRESETS, TABLE_1B_SCENARIOS, aggregate, preset, render_accuracy_table,
                         render_runtime_table, render_sweep_table, render_univariate_table,
                         run_replicates)
from .simulator import (STREAM_COVARIATES, HeterogeneitySpec, SeedSpec, make_scenario_covariates,
                        simulate_dataset)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
TABLES = ("1b", "1c", "3", "A1", "fig1b")
SWEEP_ALPHAS = (0.0, 0.05, 0.1, 0.2)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _window(text):
    try:
        start, length = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("window must be 'start,length'") from None
    if start < 0 or length < 1:
        raise argparse.ArgumentTypeError("window needs start >= 0 and length >= 1")
    return start, length


def _global_options(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--threads", type=int, default=d(os.cpu_count() or 1),
                   help="worker processes for replicates (default: CPU count)")
    p.add_argument("--seed", type=int, default=d(0), help="master seed")
    p.add_argument("--tolerance", type=float, default=d(1e-8), help="step-1 optimizer tolerance")
    p.add_argument("--window", type=_window, default=d(None),
                   help="use time points start..start+length-1 of each series")


def build_parser():
    root = _Parser(prog="voxfc", description=__doc__.splitlines()[0])
    _global_options(root, suppress=False)
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="write one simulated dataset")
    sim.add_argument("--scenario", required=True, help="preset name or YAML scenario file")
    sim.add_argument("--out", required=True, type=Path)
    sim.add_argument("--replicate", type=int, default=0)
    _global_options(sim, suppress=True)

    fit = sub.add_parser("fit", help="fit a dataset")
    fsub = fit.add_subparsers(dest="fit_command", required=True, parser_class=_Parser)
    s1 = fsub.add_parser("step1", help="region covariance fits")
    s1.add_argument("--data", required=True, type=Path)
    s1.add_argument("--region", default="all", help="region name from the manifest, or 'all'")
    s1.add_argument("--group-by", choices=["site"], default=None)
    s1.add_argument("--method", choices=["lbfgs", "nelder-mead"], default="lbfgs")
    s1.add_argument("--out", type=Path, default=None, help="write pooled parameters (needs --region all)")
    _global_options(s1, suppress=True)
    s2 = fsub.add_parser("step2", help="covariate effects with fixed step-1 parameters")
    s2.add_argument("--data", required=True, type=Path)
    s2.add_argument("--theta", required=True, type=Path)
    s2.add_argument("--boot", type=int, default=100)
    _global_options(s2, suppress=True)
    uv = fsub.add_parser("univariate", help="ROI-averaging OLS")
    uv.add_argument("--data", required=True, type=Path)
    uv.add_argument("--boot", type=int, default=0)
    uv.add_argument("--lambda", dest="lam", default="sample",
                    help="'sample' (Pearson of averages) or 'l1,l2'")
    _global_options(uv, suppress=True)

    rep = sub.add_parser("reproduce", help="run simulation presets and render a table")
    rep.add_argument("--table", required=True, choices=TABLES)
    rep.add_argument("--replicates", type=int, default=None)
    rep.add_argument("--scale-down", type=float, default=1.0,
                     help="divide the number of participants by this factor")
    rep.add_argument("--boot", type=int, default=None, help="override bootstrap resamples")
    rep.add_argument("--out", type=Path, default=Path("reproduce_out"))
    _global_options(rep, suppress=True)
    return root


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _scenario(name_or_path):
    if name_or_path in PRESETS:
        return preset(name_or_path)
    path = Path(name_or_path)
    if path.suffix.lower() in (".yaml", ".yml") or path.exists():
        return io.load_scenario_config(path)
    raise DomainError(f"unknown scenario preset {name_or_path!r}; choose from {sorted(PRESETS)}")


def cmd_simulate(args, out):
    cfg = replace(_scenario(args.scenario), seed=SeedSpec(args.seed))
    X = make_scenario_covariates(cfg, cfg.seed.rng(args.replicate, STREAM_COVARIATES))
    data = simulate_dataset(cfg.truth, X, cfg.seed, replicate=args.replicate,
                            heterogeneity=cfg.heterogeneity, standardize_data=cfg.standardize)
    names = ["intercept"] + [f"x{j}" for j in range(1, X.shape[1])]
    path = io.write_dataset(args.out, data, names)
    print(f"wrote {len(data)} participants to {path}", file=out)


def _load(args):
    m = io.load_manifest(args.data)
    return m, io.load_participants(m, args.window)


def cmd_step1(args, out, m):
    parts = args.participants
    if args.region == "all":
        regions = [1, 2]
    elif args.region in m.regions:
        regions = [m.regions.index(args.region) + 1]
    else:
        raise UsageError(f"unknown region {args.region!r}; manifest has {m.regions}")
    if args.out is not None and regions != [1, 2]:
        raise UsageError("--out needs --region all")
    if args.group_by is None:
        parts = [replace(p, site=None) for p in parts]
    fits = {k: grouped_step1(parts, k, tol=args.tolerance, method=args.method) for k in regions}
    head = f"{'region':<10} {'site':<12} {'lambda2':>8} {'sigma2':>8} {'tau2':>8} {'psi':>8} {'phi':>8} {'conv':>5}"
    print(head, file=out)
    print("-" * len(head), file=out)
    for k in regions:
        for site, f in fits[k].items():
            pr = f.params
            print(f"{m.regions[k - 1]:<10} {str(site if site is not None else 'all'):<12} "
                  f"{pr.lambda2:>8.4f} {pr.sigma2:>8.4f} {pr.tau2:>8.4f} {pr.psi:>8.4f} {pr.phi:>8.4f} "
                  f"{'yes' if f.converged else 'no':>5}", file=out)
    if args.out is not None:
        thetas = {site: pool_theta(fits[1][site], fits[2][site]) for site in fits[1]}
        io.write_theta(args.out, thetas)
        print(f"wrote {args.out}", file=out)


def grouped_stats(participants, thetas):
    """Step-2 scalars with each participant's site parameters; returns stats in participant order."""
    if list(thetas) == [None]:
        sums, X, geoms = summarize(participants)
        return step2_stats(sums, X, thetas[None], geoms), list(range(len(participants)))
    groups = {}
    for k, p in enumerate(participants):
        if p.site not in thetas:
            raise DataFormatError(f"no fitted parameters for site {p.site!r}")
        groups.setdefault(p.site, []).append(k)
    parts, order = [], []
    for site, idx in groups.items():
        sums, X, geoms = summarize([participants[k] for k in idx])
        parts.append(step2_stats(sums, X, thetas[site], geoms))
        order.extend(idx)
    return Step2Stats.concat(parts), order


def cmd_step2(args, out, names):
    thetas = io.read_theta(args.theta)
    stats, _ = grouped_stats(args.participants, thetas)
    fit = step2_fit(None, None, None, None, stats=stats)
    if args.boot:
        bd = bootstrap_draws(stats, args.boot, SeedSpec(args.seed).rng(0, 2), fit.beta_hat)
        se = bd.se
        lo, hi = wald_ci(fit.beta_hat, se)
    else:
        se = lo = hi = np.full(fit.beta_hat.size, np.nan)
    print(f"{'Covariate':<16} {'Estimate':>10} {'SE':>10} {'CI lower':>10} {'CI upper':>10}", file=out)
    for j, name in enumerate(names):
        star = "*" if np.isfinite(se[j]) and abs(fit.beta_hat[j]) / se[j] > 1.96 else ""
        print(f"{name:<16} {fit.beta_hat[j]:>10.4f} {se[j]:>10.4f} {lo[j]:>10.4f} {hi[j]:>10.4f} {star}",
              file=out)
    print(f"loglik {fit.loglik:.6f}  converged {'yes' if fit.converged else 'no'}", file=out)


def cmd_univariate(args, out, names):
    if args.lam == "sample":
        lam = ("sample", None)
    else:
        try:
            lam = tuple(float(v) for v in args.lam.split(","))
            if len(lam) != 2:
                raise ValueError
        except ValueError:
            raise UsageError("--lambda must be 'sample' or 'l1,l2'") from None
    u = univariate_fit(args.participants, *lam, B=args.boot, rng=SeedSpec(args.seed).rng(0, 3))
    print(f"{'Covariate':<16} {'Estimate':>10} {'SE':>10} {'SE boot':>10}", file=out)
    for j, name in enumerate(names):
        sb = u.se_boot[j] if u.se_boot is not None else float("nan")
        star = "*" if abs(u.beta_hat[j]) / u.se_analytic[j] > 1.96 else ""
        print(f"{name:<16} {u.beta_hat[j]:>10.4f} {u.se_analytic[j]:>10.4f} {sb:>10.4f} {star}", file=out)


def _scaled(cfg, args):
    kw = {"seed": SeedSpec(args.seed)}
    if args.replicates is not None:
        kw["replicates"] = args.replicates
    if args.boot is not None:
        kw["n_boot"] = args.boot
    if args.scale_down != 1.0:
        if args.scale_down <= 0:
            raise UsageError("--scale-down must be positive")
        kw["N"] = max(cfg.p + 2, int(round(cfg.N / args.scale_down)))
    return replace(cfg, **kw)


def cmd_reproduce(args, out):
    args.out.mkdir(parents=True, exist_ok=True)
    table = args.table
    if table in ("1b", "1c"):
        cfgs = [_scaled(replace(preset(n), methods=("proposed",)), args) for n in TABLE_1B_SCENARIOS]
    elif table == "A1":
        cfgs = [_scaled(replace(preset(n), methods=("univariate",)), args) for n in TABLE_1B_SCENARIOS]
    elif table == "3":
        cfgs = [_scaled(replace(preset("realistic"), methods=("proposed",)), args)]
    else:
        base = _scaled(replace(preset("baseline"), methods=("proposed",)), args)
        cfgs = [replace(base, name=f"alpha{a:g}", heterogeneity=HeterogeneitySpec(a)) for a in SWEEP_ALPHAS]
    rows = []
    for cfg in cfgs:
        rows.extend(aggregate(cfg, run_replicates(cfg, args.threads)))
    io.write_metrics_csv(args.out / f"metrics_{table}.csv", rows)
    io.write_timings_csv(args.out / f"timings_{table}.csv", rows)
    if table == "1b":
        text = render_accuracy_table(rows, "Step-2 estimation accuracy and coverage")
    elif table == "1c":
        timings = {r.scenario: (r.mean_runtime_step1, r.mean_runtime_step2)
                   for r in rows if r.method == "proposed"}
        text = render_runtime_table(timings)
    elif table == "A1":
        text = render_univariate_table(rows)
    elif table == "3":
        text = render_accuracy_table(rows, "Realistic scenario")
    else:
        sweep = {}
        for r in rows:
            sweep.setdefault(r.alpha, []).append(r)
        text = render_sweep_table(sweep)
    (args.out / f"table_{table}.txt").write_text(text, encoding="utf-8")
    print(text, end="", file=out)


def run(argv=None, out=None):
    """Parse ``argv`` and execute; returns the process exit code."""
    out = out if out is not None else sys.stdout
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.command == "simulate":
            cmd_simulate(args, out)
        elif args.command == "reproduce":
            cmd_reproduce(args, out)
        else:
            m, args.participants = _load(args)
            if args.fit_command == "step1":
                cmd_step1(args, out, m)
            elif args.fit_command == "step2":
                cmd_step2(args, out, m.covariate_names)
            else:
                cmd_univariate(args, out, m.covariate_names)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, SingularityError, DomainError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, NotPDError, SizeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
