"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The public names (``region_nll_terms``, ``joint_nll_terms``, ``omega_stats``,
``ar1_filter``) dispatch to the numba versions unless ``VOXFC_BACKEND=numpy``
is set; the ``*_numba`` / ``*_numpy`` variants stay importable so tests and
the benchmark can compare them directly.

Region likelihood layout: a participant's data ``Z`` is ``T x n``. With
``R_t = U diag(dt) U'`` and ``R_s = V diag(e) V'``, the region covariance in
the ``U (x) V`` basis is block diagonal over time index ``a`` with blocks
``diag(sigma2 * dt[a] * e + tau2) + lambda2 * c c'`` where ``c = V' 1``. Every
block is diagonal plus rank one, so solves and determinants are closed form.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# gradient slots returned by region_nll_terms
GRAD_NAMES = ("lambda2", "sigma2", "tau2", "psi", "phi")


def _region_nll_terms_py(Z, U, dt, Kt, e, V, Kpsi, lam2, s2, t2, want_grad):
    N, T, n = Z.shape
    shared = V.shape[0] == 1
    Ut = np.ascontiguousarray(U.T)
    nll = np.empty(N)
    grad = np.zeros((N, 5))
    for i in range(N):
        g_idx = 0 if shared else i
        Vi = V[g_idx]
        ei = e[g_idx]
        X = Ut @ Z[i] @ Vi
        c = Vi.sum(axis=0)
        Ki = Kpsi[g_idx]
        W = np.empty((T, n))
        total = 0.0
        gl = 0.0
        gs = 0.0
        gt = 0.0
        gp = 0.0
        gphi = 0.0
        for a in range(T):
            sa = 0.0
            ga = 0.0
            for j in range(n):
                d = s2 * dt[a] * ei[j] + t2
                h = c[j] / d
                sa += c[j] * h
                ga += h * X[a, j]
                total += np.log(d) + X[a, j] * X[a, j] / d
            den = 1.0 + lam2 * sa
            total += np.log(den) - lam2 * ga * ga / den
            if want_grad:
                coef = lam2 * ga / den
                cw = 0.0
                tr_e = 0.0
                q_e = 0.0
                tr_i = 0.0
                q_i = 0.0
                tr_k = 0.0
                for j in range(n):
                    d = s2 * dt[a] * ei[j] + t2
                    h = c[j] / d
                    w = X[a, j] / d - coef * h
                    W[a, j] = w
                    bd = 1.0 / d - lam2 * h * h / den
                    cw += c[j] * w
                    tr_e += ei[j] * bd
                    q_e += ei[j] * w * w
                    tr_i += bd
                    q_i += w * w
                    tr_k += Ki[j, j] / d
                hkh = 0.0
                wkw = 0.0
                for j in range(n):
                    dj = s2 * dt[a] * ei[j] + t2
                    hj = c[j] / dj
                    for k in range(n):
                        dk = s2 * dt[a] * ei[k] + t2
                        hkh += hj * Ki[j, k] * c[k] / dk
                        wkw += W[a, j] * Ki[j, k] * W[a, k]
                gl += sa / den - cw * cw
                gs += dt[a] * (tr_e - q_e)
                gt += tr_i - q_i
                gp += s2 * dt[a] * (tr_k - lam2 * hkh / den - wkw)
                gphi += s2 * Kt[a, a] * tr_e
        nll[i] = 0.5 * total
        if want_grad:
            Q = Kt @ W
            quad_phi = 0.0
            for a in range(T):
                for j in range(n):
                    quad_phi += Q[a, j] * ei[j] * W[a, j]
            grad[i, 0] = 0.5 * gl
            grad[i, 1] = 0.5 * gs
            grad[i, 2] = 0.5 * gt
            grad[i, 3] = 0.5 * gp
            grad[i, 4] = 0.5 * (gphi - s2 * quad_phi)
    return nll, grad


region_nll_terms_numba = njit(_region_nll_terms_py)


def region_nll_terms_numpy(Z, U, dt, Kt, e, V, Kpsi, lam2, s2, t2, want_grad):
    """Vectorized twin of the numba kernel (same arguments and outputs)."""
    N, T, n = Z.shape
    X = np.matmul(np.matmul(U.T, Z), V)                      # (N, T, n)
    c = V.sum(axis=1)                                        # (G, n)
    D = s2 * dt[None, :, None] * e[:, None, :] + t2          # (G, T, n)
    Dinv = 1.0 / D
    h = c[:, None, :] * Dinv                                 # (G, T, n)
    sa = np.sum(c[:, None, :] * h, axis=2)                   # (G, T)
    ga = np.sum(h * X, axis=2)                               # (N, T)
    den = 1.0 + lam2 * sa                                    # (G, T)
    logdet = np.sum(np.log(D), axis=(1, 2)) + np.sum(np.log(den), axis=1)
    quad = np.sum(X * X * Dinv, axis=(1, 2)) - lam2 * np.sum(ga * ga / den, axis=1)
    nll = 0.5 * (logdet + quad)
    nll = np.broadcast_to(nll, (N,)).copy()
    grad = np.zeros((N, 5))
    if not want_grad:
        return nll, grad
    W = X * Dinv - (lam2 * ga / den)[:, :, None] * h          # (N, T, n)
    bd = Dinv - lam2 * h * h / den[:, :, None]                # (G, T, n)
    cw = np.sum(c[:, None, :] * W, axis=2)
    ev = e[:, None, :]
    tr_e = np.sum(ev * bd, axis=2)                            # (G, T)
    q_e = np.sum(ev * W * W, axis=2)                          # (N, T)
    kdiag = np.diagonal(Kpsi, axis1=1, axis2=2)               # (G, n)
    tr_k = np.sum(kdiag[:, None, :] * Dinv, axis=2)
    hkh = np.sum(np.matmul(h, Kpsi) * h, axis=2)
    wkw = np.sum(np.matmul(W, Kpsi) * W, axis=2)
    grad[:, 0] = 0.5 * np.sum(sa / den - cw * cw, axis=1)
    grad[:, 1] = 0.5 * np.sum(dt[None, :] * (tr_e - q_e), axis=1)
    grad[:, 2] = 0.5 * np.sum(np.sum(bd, axis=2) - np.sum(W * W, axis=2), axis=1)
    grad[:, 3] = 0.5 * s2 * np.sum(dt[None, :] * (tr_k - lam2 * hkh / den - wkw), axis=1)
    quad_phi = np.sum(np.matmul(Kt, W) * ev * W, axis=(1, 2))
    grad[:, 4] = 0.5 * s2 * (np.sum(np.diag(Kt)[None, :] * tr_e, axis=1) - quad_phi)
    return nll, grad


def _joint_nll_terms_py(Z1, Z2, U, dt, e1, V1, e2, V2, lam1sq, s1, t1, lam2sq, s2, t2, rho):
    N, T, n1 = Z1.shape
    n2 = Z2.shape[2]
    shared1 = V1.shape[0] == 1
    shared2 = V2.shape[0] == 1
    Ut = np.ascontiguousarray(U.T)
    l1 = np.sqrt(lam1sq)
    l2 = np.sqrt(lam2sq)
    out = np.empty(N)
    for i in range(N):
        k1 = 0 if shared1 else i
        k2 = 0 if shared2 else i
        X1 = Ut @ Z1[i] @ V1[k1]
        X2 = Ut @ Z2[i] @ V2[k2]
        c1 = V1[k1].sum(axis=0)
        c2 = V2[k2].sum(axis=0)
        cross = rho[i] * l1 * l2
        total = 0.0
        for a in range(T):
            m1 = 0.0
            g1 = 0.0
            for j in range(n1):
                d = s1 * dt[a] * e1[k1, j] + t1
                total += np.log(d) + X1[a, j] * X1[a, j] / d
                m1 += c1[j] * c1[j] / d
                g1 += c1[j] * X1[a, j] / d
            m2 = 0.0
            g2 = 0.0
            for j in range(n2):
                d = s2 * dt[a] * e2[k2, j] + t2
                total += np.log(d) + X2[a, j] * X2[a, j] / d
                m2 += c2[j] * c2[j] / d
                g2 += c2[j] * X2[a, j] / d
            # S = I + M Lambda, M = diag(m1, m2)
            s11 = 1.0 + m1 * lam1sq
            s12 = m1 * cross
            s21 = m2 * cross
            s22 = 1.0 + m2 * lam2sq
            det = s11 * s22 - s12 * s21
            y1 = (s22 * g1 - s12 * g2) / det
            y2 = (-s21 * g1 + s11 * g2) / det
            corr = g1 * (lam1sq * y1 + cross * y2) + g2 * (cross * y1 + lam2sq * y2)
            total += np.log(det) - corr
        out[i] = 0.5 * total
    return out


joint_nll_terms_numba = njit(_joint_nll_terms_py)


def joint_nll_terms_numpy(Z1, Z2, U, dt, e1, V1, e2, V2, lam1sq, s1, t1, lam2sq, s2, t2, rho):
    X1 = np.matmul(np.matmul(U.T, Z1), V1)
    X2 = np.matmul(np.matmul(U.T, Z2), V2)
    c1 = V1.sum(axis=1)[:, None, :]
    c2 = V2.sum(axis=1)[:, None, :]
    D1 = s1 * dt[None, :, None] * e1[:, None, :] + t1
    D2 = s2 * dt[None, :, None] * e2[:, None, :] + t2
    base = (np.sum(np.log(D1), axis=(1, 2)) + np.sum(X1 * X1 / D1, axis=(1, 2))
            + np.sum(np.log(D2), axis=(1, 2)) + np.sum(X2 * X2 / D2, axis=(1, 2)))
    m1 = np.sum(c1 * c1 / D1, axis=2)
    m2 = np.sum(c2 * c2 / D2, axis=2)
    g1 = np.sum(c1 * X1 / D1, axis=2)
    g2 = np.sum(c2 * X2 / D2, axis=2)
    cross = (np.asarray(rho) * np.sqrt(lam1sq * lam2sq))[:, None]
    s11 = 1.0 + m1 * lam1sq
    s12 = m1 * cross
    s21 = m2 * cross
    s22 = 1.0 + m2 * lam2sq
    det = s11 * s22 - s12 * s21
    y1 = (s22 * g1 - s12 * g2) / det
    y2 = (-s21 * g1 + s11 * g2) / det
    corr = g1 * (lam1sq * y1 + cross * y2) + g2 * (cross * y1 + lam2sq * y2)
    return 0.5 * (base + np.sum(np.log(det) - corr, axis=1))


def _omega_stats_py(Y, P1, E1, ld1, P2, E2, ld2, kappa):
    N, n1, n2 = Y.shape
    shared1 = P1.shape[0] == 1
    shared2 = P2.shape[0] == 1
    a_out = np.empty(N)
    b_out = np.empty(N)
    q_out = np.empty(N)
    ld_out = np.empty(N)
    for i in range(N):
        k1 = 0 if shared1 else i
        k2 = 0 if shared2 else i
        H = np.ascontiguousarray(P1[k1].T) @ Y[i] @ P2[k2]
        g1 = P1[k1].sum(axis=0)
        g2 = P2[k2].sum(axis=0)
        a = 0.0
        b = 0.0
        q = 0.0
        ld = n2 * ld1[k1] + n1 * ld2[k2]
        for j in range(n1):
            for k in range(n2):
                d = 1.0 + kappa[i] * E1[k1, j] * E2[k2, k]
                g = g1[j] * g2[k]
                a += H[j, k] * H[j, k] / d
                b += g * H[j, k] / d
                q += g * g / d
                ld += np.log(d)
        a_out[i] = a
        b_out[i] = b
        q_out[i] = q
        ld_out[i] = ld
    return a_out, b_out, q_out, ld_out


omega_stats_numba = njit(_omega_stats_py)


def omega_stats_numpy(Y, P1, E1, ld1, P2, E2, ld2, kappa):
    N, n1, n2 = Y.shape
    H = np.matmul(np.matmul(np.swapaxes(P1, 1, 2), Y), P2)
    g1 = P1.sum(axis=1)
    g2 = P2.sum(axis=1)
    G = g1[:, :, None] * g2[:, None, :]
    D = 1.0 + kappa[:, None, None] * E1[:, :, None] * E2[:, None, :]
    a = np.sum(H * H / D, axis=(1, 2))
    b = np.sum(G * H / D, axis=(1, 2))
    q = np.broadcast_to(np.sum(G * G / D, axis=(1, 2)), (N,)).copy()
    ld = n2 * ld1 + n1 * ld2 + np.sum(np.log(D), axis=(1, 2))
    return a, b, q, np.broadcast_to(ld, (N,)).copy()


def _ar1_filter_py(eps, phi):
    N, T, n = eps.shape
    out = np.empty_like(eps)
    for i in range(N):
        p = phi[i]
        w = np.sqrt(1.0 - p * p)
        for j in range(n):
            out[i, 0, j] = eps[i, 0, j]
        for t in range(1, T):
            for j in range(n):
                out[i, t, j] = p * out[i, t - 1, j] + w * eps[i, t, j]
    return out


ar1_filter_numba = njit(_ar1_filter_py)


def ar1_filter_numpy(eps, phi):
    """Stationary AR(1) recursion along axis 1, one coefficient per row of axis 0."""
    out = np.empty_like(eps)
    p = np.asarray(phi, dtype=float)[:, None]
    w = np.sqrt(1.0 - p * p)
    out[:, 0] = eps[:, 0]
    for t in range(1, eps.shape[1]):
        out[:, t] = p * out[:, t - 1] + w * eps[:, t]
    return out


if USE_NUMBA:
    region_nll_terms = region_nll_terms_numba
    joint_nll_terms = joint_nll_terms_numba
    omega_stats = omega_stats_numba
    ar1_filter = ar1_filter_numba
else:
    region_nll_terms = region_nll_terms_numpy
    joint_nll_terms = joint_nll_terms_numpy
    omega_stats = omega_stats_numpy
    ar1_filter = ar1_filter_numpy
