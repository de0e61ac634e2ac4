"""Compiled screening of continuation candidates.

Clips each QP iterate to the increment box, measures its linearized barrier
violation and predicted Lyapunov value, and applies the progress certificate.
Mirrors the readable definitions in ``retarget`` (``predicted_lyapunov``,
``certify``) for a whole family at once.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def screen(Z, status, box_lo, box_hi, C, h, gamma, J, e, W, feas_tol, cert_enabled, eta, eps_V, eps_q, require_feasible):
    """Returns (DQ, violation, feasible, V_pred, accepted, V); W is a full matrix."""
    K, d = Z.shape
    nc = C.shape[0]
    nr = e.shape[0]
    DQ = np.zeros((K, d))
    viol = np.empty(K)
    feasible = np.zeros(K, dtype=np.bool_)
    V_pred = np.empty(K)
    accepted = np.zeros(K, dtype=np.bool_)
    r = np.empty(nr)
    V = 0.0
    for a in range(nr):
        for b in range(nr):
            V += e[a] * W[a, b] * e[b]
    V *= 0.5
    for j in range(K):
        usable = status[j] != 2
        for i in range(d):
            if not np.isfinite(Z[j, i]):
                usable = False
        if usable:
            for i in range(d):
                DQ[j, i] = min(max(Z[j, i], box_lo[i]), box_hi[i])
            worst = 0.0
            for c in range(nc):
                slack = gamma * h[c]
                for i in range(d):
                    slack += C[c, i] * DQ[j, i]
                worst = max(worst, -slack)
            viol[j] = worst
        else:
            viol[j] = np.inf
        feasible[j] = viol[j] <= feas_tol
        for a in range(nr):
            acc = e[a]
            for i in range(d):
                acc -= J[a, i] * DQ[j, i]
            r[a] = acc
        vp = 0.0
        for a in range(nr):
            for b in range(nr):
                vp += r[a] * W[a, b] * r[b]
        V_pred[j] = 0.5 * vp
        if cert_enabled:
            norm = 0.0
            for i in range(d):
                norm += DQ[j, i] * DQ[j, i]
            accepted[j] = feasible[j] and V_pred[j] <= V - eta and (V <= eps_V or np.sqrt(norm) >= eps_q)
        else:
            accepted[j] = usable and (feasible[j] or not require_feasible)
    return DQ, viol, feasible, V_pred, accepted, V
