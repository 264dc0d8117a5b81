"""Compiled inner loops for coordinate descent and its differentiation.

Every datafit is written as ``f(beta) = sum_i phi(r_i) + c^T beta`` with
``r = M beta``; ``M`` is stored column-compressed (``data, indices, indptr``)
and, for the reverse sweep, also row-compressed.  Datafit codes: 0 quadratic,
1 logistic, 2 dual SVM.  Penalty codes: 0 L1, 1 elastic net, 2 box, 3 L2.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1. / (1. + np.exp(-x))
    e = np.exp(x)
    return e / (1. + e)


@njit(cache=True)
def phi1(df_kind, r_i, y_i, n):
    if df_kind == 0:
        return (r_i - y_i) / n
    if df_kind == 1:
        return -y_i * _sigmoid(-y_i * r_i) / n
    return r_i


@njit(cache=True)
def phi2(df_kind, r_i, y_i, n):
    if df_kind == 0:
        return 1. / n
    if df_kind == 1:
        s = _sigmoid(y_i * r_i)
        return s * (1. - s) / n
    return 1.


@njit(cache=True)
def linear_term(df_kind):
    return -1. if df_kind == 2 else 0.


@njit(cache=True)
def prox_scalar(pen_kind, z, gamma, lam):
    """Return ``(prox, dz, dlam_0, dlam_1)`` for ``gamma * g_j(., lam)``."""
    if pen_kind == 0:
        t = gamma * np.exp(lam[0])
        if z > t:
            return z - t, 1., -t, 0.
        if z < -t:
            return z + t, 1., t, 0.
        return 0., 0., 0., 0.
    if pen_kind == 1:
        t = gamma * np.exp(lam[0])
        b = gamma * np.exp(lam[1])
        d = 1. + b
        if z > t:
            st = z - t
            return st / d, 1. / d, -t / d, -st * b / (d * d)
        if z < -t:
            st = z + t
            return st / d, 1. / d, t / d, -st * b / (d * d)
        return 0., 0., 0., 0.
    if pen_kind == 2:
        c = np.exp(lam[0])
        if z <= 0.:
            return 0., 0., 0., 0.
        if z >= c:
            if z > c:
                return c, 0., c, 0.
            return c, 0., 0., 0.
        return z, 1., 0., 0.
    b = gamma * np.exp(lam[0])
    d = 1. + b
    return z / d, 1. / d, -z * b / (d * d), 0.


@njit(cache=True, nogil=True)
def pcd_epoch(data, indices, indptr, y, n_norm, df_kind, pen_kind, lam,
              beta, r, lips, jac, dr, compute_jac, z_out, delta_out):
    """One cyclic pass of proximal coordinate descent.

    ``r = M beta`` and ``dr = M jac`` are updated in place.  ``z_out`` and
    ``delta_out`` receive, per coordinate, the pre-prox point and the change
    of ``beta_j``.
    """
    p = beta.shape[0]
    n_hyper = jac.shape[1]
    c = linear_term(df_kind)
    dz = np.zeros(n_hyper)
    for j in range(p):
        if lips[j] == 0.:
            z_out[j] = beta[j]
            delta_out[j] = 0.
            continue
        start, end = indptr[j], indptr[j + 1]
        g = c
        for k in range(start, end):
            i = indices[k]
            g += data[k] * phi1(df_kind, r[i], y[i], n_norm)
        gamma = 1. / lips[j]
        z = beta[j] - gamma * g
        if compute_jac:
            for t in range(n_hyper):
                hj = 0.
                for k in range(start, end):
                    i = indices[k]
                    hj += data[k] * phi2(df_kind, r[i], y[i], n_norm) * dr[i, t]
                dz[t] = jac[j, t] - gamma * hj
        out, a, b0, b1 = prox_scalar(pen_kind, z, gamma, lam)
        delta = out - beta[j]
        beta[j] = out
        z_out[j] = z
        delta_out[j] = delta
        if delta != 0.:
            for k in range(start, end):
                r[indices[k]] += data[k] * delta
        if compute_jac:
            for t in range(n_hyper):
                new = a * dz[t] + (b0 if t == 0 else b1)
                dd = new - jac[j, t]
                jac[j, t] = new
                if dd != 0.:
                    for k in range(start, end):
                        dr[indices[k], t] += data[k] * dd


@njit(cache=True, nogil=True)
def pcd_backward(data, indices, indptr, rdata, rindices, rindptr, y, n_norm,
                 df_kind, pen_kind, lam, r, lips, zs, deltas, v, h):
    """Reverse sweep of coordinate descent.

    ``r`` must hold ``M beta`` at the end of the forward pass; it is rewound
    in place using the stored coordinate changes, so the Hessian rows are
    evaluated at the exact pre-update iterates.  ``v`` and ``h`` are updated
    in place.
    """
    n_iter, p = zs.shape
    for k in range(n_iter - 1, -1, -1):
        for j in range(p - 1, -1, -1):
            if lips[j] == 0.:
                continue
            start, end = indptr[j], indptr[j + 1]
            delta = deltas[k, j]
            if delta != 0.:
                for kk in range(start, end):
                    r[indices[kk]] -= data[kk] * delta
            gamma = 1. / lips[j]
            out, a, b0, b1 = prox_scalar(pen_kind, zs[k, j], gamma, lam)
            h[0] += v[j] * b0
            if h.shape[0] > 1:
                h[1] += v[j] * b1
            u = a * v[j]
            v[j] = u
            if u == 0.:
                continue
            # v -= gamma * u * M^T diag(phi'') M_j
            for kk in range(start, end):
                i = indices[kk]
                w_i = gamma * u * data[kk] * phi2(df_kind, r[i], y[i], n_norm)
                for ll in range(rindptr[i], rindptr[i + 1]):
                    v[rindices[ll]] -= w_i * rdata[ll]
