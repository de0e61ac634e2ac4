"""Compiled fixed-penalty ADMM loop.

Same iteration, termination and infeasibility rules as the numpy loop in
``qpsolve._admm``; each problem of the stack runs on its own, so a batch and
one-at-a-time solves produce the same numbers.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _farkas_row(A, dy, lo, up, eps_pinf):
    k, m = A.shape
    norm = 0.0
    for i in range(k):
        norm = max(norm, abs(dy[i]))
    if norm == 0.0:
        return False
    tiny = eps_pinf * norm
    support = 0.0
    for i in range(k):
        if dy[i] > tiny and np.isinf(up[i]):
            return False
        if dy[i] < -tiny and np.isinf(lo[i]):
            return False
        if dy[i] > 0 and not np.isinf(up[i]):
            support += up[i] * dy[i]
        elif dy[i] < 0 and not np.isinf(lo[i]):
            support += lo[i] * dy[i]
    for j in range(m):
        acc = 0.0
        for i in range(k):
            acc += A[i, j] * dy[i]
        if abs(acc) > tiny:
            return False
    return support < -tiny


@njit(cache=True)
def admm_fixed(H, A, Minv, G, L, U, X, S, Y, rho, sigma, eps_abs, eps_rel, max_iter, window, eps_pinf):
    """In-place ADMM over rows of G; returns status, iterations and residuals."""
    B, m = G.shape
    k = A.shape[0]
    status = np.ones(B, dtype=np.int64)
    iters = np.full(B, max_iter, dtype=np.int64)
    r_prim = np.zeros(B)
    r_dual = np.zeros(B)
    rhs = np.empty(m)
    x = np.empty(m)
    Ax = np.empty(k)
    ATy = np.empty(m)
    dy = np.empty(k)
    for b in range(B):
        g = G[b]
        lo = L[b]
        up = U[b]
        s = S[b]
        y = Y[b]
        for j in range(m):
            x[j] = X[b, j]
        prev = np.inf
        nondec = 0
        for it in range(1, max_iter + 1):
            for j in range(m):
                rhs[j] = sigma * x[j] - g[j]
            for i in range(k):
                w = rho[i] * s[i] - y[i]
                for j in range(m):
                    rhs[j] += A[i, j] * w
            for j in range(m):
                acc = 0.0
                for l in range(m):
                    acc += Minv[j, l] * rhs[l]
                x[j] = acc
            rp = 0.0
            ps = 0.0
            for i in range(k):
                acc = 0.0
                for j in range(m):
                    acc += A[i, j] * x[j]
                Ax[i] = acc
                v = acc + y[i] / rho[i]
                if v < lo[i]:
                    v = lo[i]
                elif v > up[i]:
                    v = up[i]
                s[i] = v
                step = rho[i] * (acc - v)
                dy[i] = step
                y[i] += step
                rp = max(rp, abs(acc - v))
                ps = max(ps, abs(acc), abs(v))
            rd = 0.0
            ds = 0.0
            for j in range(m):
                aty = 0.0
                for i in range(k):
                    aty += A[i, j] * y[i]
                hx = 0.0
                for l in range(m):
                    hx += H[j, l] * x[l]
                rd = max(rd, abs(hx + g[j] + aty))
                ds = max(ds, abs(hx), abs(aty), abs(g[j]))
            r_prim[b] = rp
            r_dual[b] = rd
            if rp <= eps_abs + eps_rel * ps and rd <= eps_abs + eps_rel * ds:
                status[b] = 0
                iters[b] = it
                break
            if rp >= prev:
                nondec += 1
            else:
                nondec = 0
            prev = rp
            if nondec >= window and rp > 1e2 * eps_abs and _farkas_row(A, dy, lo, up, eps_pinf):
                status[b] = 2
                iters[b] = it
                break
        for j in range(m):
            X[b, j] = x[j]
    return status, iters, r_prim, r_dual


@njit(cache=True)
def solve_fixed(H, A, G, L, U, X, S, Y, rho, sigma, eps_abs, eps_rel, max_iter, window, eps_pinf):
    """Row-equilibrated fixed-penalty ADMM, setup included.

    Scales each row of A to unit norm (bounds, slacks and multipliers follow),
    forms and inverts H + sigma I + A' diag(rho) A, runs ``admm_fixed`` and
    maps slacks and multipliers back.  X, S and Y are updated in place.
    """
    B, m = G.shape
    k = A.shape[0]
    d = np.empty(k)
    As = np.empty((k, m))
    for i in range(k):
        nrm = 0.0
        for j in range(m):
            nrm += A[i, j] * A[i, j]
        nrm = np.sqrt(nrm)
        d[i] = 1.0 / nrm if nrm > 1e-12 else 1.0
        for j in range(m):
            As[i, j] = A[i, j] * d[i]
    Ls = np.empty((B, k))
    Us = np.empty((B, k))
    for b in range(B):
        for i in range(k):
            Ls[b, i] = L[b, i] * d[i]
            Us[b, i] = U[b, i] * d[i]
            S[b, i] *= d[i]
            Y[b, i] /= d[i]
    M = np.empty((m, m))
    for j in range(m):
        for l in range(m):
            acc = H[j, l]
            for i in range(k):
                acc += As[i, j] * rho[i] * As[i, l]
            M[j, l] = acc
        M[j, j] += sigma
    Minv = np.linalg.inv(M)
    status, iters, r_prim, r_dual = admm_fixed(H, As, Minv, G, Ls, Us, X, S, Y, rho, sigma, eps_abs, eps_rel, max_iter, window, eps_pinf)
    for b in range(B):
        for i in range(k):
            S[b, i] /= d[i]
            Y[b, i] *= d[i]
    return status, iters, r_prim, r_dual
