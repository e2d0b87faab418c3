"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--N 1000] [--T 100] [--n 10] [--repeat 5]

The first numba call (compilation or cache load) is excluded from timing.
"""

import argparse
import time

import numpy as np
from scipy.linalg import toeplitz

from voxfc import kernels
from voxfc.crosscorr import region_whitening


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def make_inputs(N, T, n, seed=0):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((N, T, n))
    coords = rng.random((N, n, 3))
    dist = np.sqrt(((coords[:, :, None] - coords[:, None]) ** 2).sum(-1))
    phi, psi = 0.3, 1.0
    lag = np.abs(np.subtract.outer(np.arange(T), np.arange(T)))
    dt, U = np.linalg.eigh(toeplitz(phi ** np.arange(T)))
    Kt = U.T @ np.where(lag > 0, lag * phi ** np.maximum(lag - 1, 0), 0.0) @ U
    R = np.exp(-dist / psi)
    e, V = np.linalg.eigh(R)
    Kpsi = np.swapaxes(V, 1, 2) @ (R * dist / psi ** 2) @ V
    c = lambda a: np.ascontiguousarray(a)  # noqa: E731
    return dict(Z=Z, U=c(U), dt=dt, Kt=c(Kt), e=c(e), V=c(V), Kpsi=c(Kpsi), R=R, rng=rng)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=1000)
    ap.add_argument("--T", type=int, default=100)
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    d = make_inputs(a.N, a.T, a.n)
    args = (d["Z"], d["U"], d["dt"], d["Kt"], d["e"], d["V"], d["Kpsi"], 0.4, 0.3, 0.3)

    class _P:
        lambda2, sigma2, tau2 = 0.4, 0.3, 0.3

    w = region_whitening(_P, d["R"])
    Y = d["rng"].standard_normal((a.N, a.n, a.n))
    kappa = np.full(a.N, 0.05)
    eps = d["rng"].standard_normal((a.N, a.T, a.n))
    phis = np.full(a.N, 0.3)
    rho = np.full(a.N, 0.2)
    cases = [
        ("region nll", lambda k: k(*args, False), kernels.region_nll_terms_numba, kernels.region_nll_terms_numpy),
        ("region nll + grad", lambda k: k(*args, True), kernels.region_nll_terms_numba,
         kernels.region_nll_terms_numpy),
        ("omega stats", lambda k: k(Y, w.P, w.E, w.logdet_C, w.P, w.E, w.logdet_C, kappa),
         kernels.omega_stats_numba, kernels.omega_stats_numpy),
        ("joint nll", lambda k: k(d["Z"], d["Z"], d["U"], d["dt"], d["e"], d["V"], d["e"], d["V"],
                                  0.4, 0.3, 0.3, 0.4, 0.3, 0.3, rho),
         kernels.joint_nll_terms_numba, kernels.joint_nll_terms_numpy),
        ("ar1 filter", lambda k: k(eps, phis), kernels.ar1_filter_numba, kernels.ar1_filter_numpy),
    ]
    print(f"N={a.N} T={a.T} n={a.n}  (best of {a.repeat})")
    print(f"{'kernel':<20} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, call, kn, kp in cases:
        tn = _best(lambda: call(kn), a.repeat)
        tp = _best(lambda: call(kp), a.repeat)
        print(f"{name:<20} {tn * 1e3:>10.2f} {tp * 1e3:>10.2f} {tp / tn:>8.2f}")


if __name__ == "__main__":
    main()
