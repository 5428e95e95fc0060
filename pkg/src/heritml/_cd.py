"""Numba kernels for cyclic coordinate descent on the elastic-net objective

    (1/2n) ||y - X b||^2 + l1 ||b||_1 + (l2/2) ||b||^2

with l1 = lambda * alpha and l2 = lambda * (1 - alpha).  Matrices are passed
transposed (p x n, C order) so each column is a contiguous row.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _soft(g, t):
    if g > t:
        return g - t
    if g < -t:
        return g + t
    return 0.0


@njit(cache=True, nogil=True)
def objective(XT, y, beta, l1, l2):
    n = y.shape[0]
    r = y.copy()
    for j in range(beta.shape[0]):
        b = beta[j]
        if b != 0.0:
            for i in range(n):
                r[i] -= XT[j, i] * b
    return 0.5 * np.dot(r, r) / n + l1 * np.abs(beta).sum() + 0.5 * l2 * np.dot(beta, beta)


@njit(cache=True, nogil=True)
def _penalty(beta, l1, l2):
    s1 = 0.0
    s2 = 0.0
    for j in range(beta.shape[0]):
        s1 += abs(beta[j])
        s2 += beta[j] * beta[j]
    return l1 * s1 + 0.5 * l2 * s2


@njit(cache=True, nogil=True, fastmath=True)
def _sweep(XT, r, beta, col_sq, l1, l2, idx, n_idx):
    """One pass over coordinates idx[:n_idx]; returns the largest weighted squared change."""
    n = r.shape[0]
    inv_n = 1.0 / n
    dmax = 0.0
    for k in range(n_idx):
        j = idx[k]
        cs = col_sq[j]
        if cs == 0.0:
            continue
        old = beta[j]
        g = 0.0
        for i in range(n):
            g += XT[j, i] * r[i]
        g = g * inv_n + cs * old
        new = _soft(g, l1) / (cs + l2)
        d = new - old
        if d != 0.0:
            beta[j] = new
            for i in range(n):
                r[i] -= d * XT[j, i]
            w = cs * d * d
            if w > dmax:
                dmax = w
    return dmax


@njit(cache=True, nogil=True)
def solve(XT, r, beta, col_sq, l1, l2, tol, max_sweeps, trace):
    """Active-set cyclic coordinate descent, updating ``beta`` and residual ``r`` in place.

    The nonzero coordinates are cycled until the largest weighted squared
    change col_sq_j * (delta b_j)^2 drops below ``tol``; then one pass over
    the zero coordinates checks optimality there.  Convergence is declared
    when that pass moves nothing by more than ``tol``.  When ``trace`` has
    room, the objective after every pass is written to it.
    Returns (passes, converged).
    """
    p = beta.shape[0]
    n = r.shape[0]
    active = np.empty(p, dtype=np.int64)
    inactive = np.empty(p, dtype=np.int64)
    sweeps = 0
    while sweeps < max_sweeps:
        n_act = 0
        n_in = 0
        for j in range(p):
            if beta[j] != 0.0:
                active[n_act] = j
                n_act += 1
            else:
                inactive[n_in] = j
                n_in += 1
        while n_act > 0 and sweeps < max_sweeps:
            dmax = _sweep(XT, r, beta, col_sq, l1, l2, active, n_act)
            if sweeps < trace.shape[0]:
                trace[sweeps] = 0.5 * np.dot(r, r) / n + _penalty(beta, l1, l2)
            sweeps += 1
            if dmax < tol:
                break
        if sweeps >= max_sweeps:
            break
        dmax = _sweep(XT, r, beta, col_sq, l1, l2, inactive, n_in)
        if sweeps < trace.shape[0]:
            trace[sweeps] = 0.5 * np.dot(r, r) / n + _penalty(beta, l1, l2)
        sweeps += 1
        if dmax < tol:
            return sweeps, True
    return sweeps, False


@njit(cache=True, nogil=True)
def path(XT, y, col_sq, lambdas, alpha, tol, max_sweeps):
    """Warm-started solutions along a decreasing lambda grid; returns (betas, sweeps, converged)."""
    p = XT.shape[0]
    L = lambdas.shape[0]
    betas = np.zeros((L, p))
    beta = np.zeros(p)
    r = y.copy()
    sweeps = np.zeros(L, dtype=np.int64)
    conv = np.zeros(L, dtype=np.bool_)
    empty = np.empty(0)
    for k in range(L):
        lam = lambdas[k]
        s, c = solve(XT, r, beta, col_sq, lam * alpha, lam * (1.0 - alpha), tol, max_sweeps, empty)
        sweeps[k] = s
        conv[k] = c
        betas[k] = beta
    return betas, sweeps, conv


@njit(cache=True, nogil=True)
def path_test_error(XT, y, col_sq, lambdas, alpha, tol, max_sweeps, XT_test, y_test):
    """Out-of-sample mean squared error along the path (without storing coefficients)."""
    p = XT.shape[0]
    L = lambdas.shape[0]
    m = y_test.shape[0]
    err = np.empty(L)
    beta = np.zeros(p)
    r = y.copy()
    pred = np.zeros(m)
    prev = np.zeros(p)
    empty = np.empty(0)
    ok = True
    for k in range(L):
        lam = lambdas[k]
        s, c = solve(XT, r, beta, col_sq, lam * alpha, lam * (1.0 - alpha), tol, max_sweeps, empty)
        ok = ok and c
        for j in range(p):
            d = beta[j] - prev[j]
            if d != 0.0:
                for i in range(m):
                    pred[i] += d * XT_test[j, i]
                prev[j] = beta[j]
        e = 0.0
        for i in range(m):
            t = y_test[i] - pred[i]
            e += t * t
        err[k] = e / m
    return err, ok
