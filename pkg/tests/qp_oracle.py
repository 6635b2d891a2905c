"""Dense brute-force QP oracle for the epsilon-SVR dual, built on cvxopt.

Independent of the production SMO path: it assembles the full 2n-variable
box-constrained quadratic program and hands it to an interior-point solver.
"""

from __future__ import annotations

import numpy as np
from cvxopt import matrix, solvers

solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12)


def solve_dual_qp(K: np.ndarray, y: np.ndarray, C: float, eps: float):
    """Returns (beta, bias, objective) at the dual optimum."""
    n = len(y)
    P = np.block([[K, -K], [-K, K]]) + 1e-10 * np.eye(2 * n)
    q = np.concatenate([eps - y, eps + y])
    G = np.vstack([np.eye(2 * n), -np.eye(2 * n)])
    h = np.concatenate([C * np.ones(2 * n), np.zeros(2 * n)])
    A = np.concatenate([np.ones(n), -np.ones(n)])[None, :]
    sol = solvers.qp(matrix(P), matrix(q), matrix(G), matrix(h), matrix(A), matrix([0.0]))
    z = np.array(sol["x"]).ravel()
    ap, am = z[:n], z[n:]
    beta = ap - am
    objective = float(0.5 * beta @ K @ beta + eps * (ap.sum() + am.sum()) - y @ beta)

    raw = K @ beta
    thr = 1e-6 * C
    free = (np.abs(beta) > thr) & (np.abs(beta) < C - thr)
    g0 = y - raw
    if free.any():
        bias = float(
            np.mean(np.where(beta[free] > 0, y[free] - eps, y[free] + eps) - raw[free])
        )
    else:
        # bias is only interval-determined; use the same KKT-bound midpoint
        # convention as the production solver so predictions are comparable
        up = np.maximum(
            np.where(ap < C - thr, g0 - eps, -np.inf),
            np.where(am > thr, g0 + eps, -np.inf),
        )
        low = np.minimum(
            np.where(ap > thr, g0 - eps, np.inf),
            np.where(am < C - thr, g0 + eps, np.inf),
        )
        bias = float((up.max() + low.min()) / 2.0)
    return beta, bias, objective


def oracle_predict(beta, bias, K_cross, scaler):
    """De-standardized, clamped predictions from oracle dual coefficients."""
    raw = K_cross @ beta + bias
    return np.maximum(scaler.inverse_y(raw), 0.0)
