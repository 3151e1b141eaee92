"""Slow reference implementations used to cross-check the fast paths.

They follow the textbook definitions literally (explicit loops, explicit
inverses) and are only suitable for small instances.
"""
import numpy as np


def variance_double_loop(membership, estimates):
    """Split-membership variance with explicit loops over rows ``i`` and splits ``b``.

    Returns ``(v_raw, v_corrected)`` for each column of ``estimates`` (B x k).
    """
    membership = np.asarray(membership, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    B, n = membership.shape
    k = estimates.shape[1]
    v_raw = np.zeros(k)
    v_b = np.zeros(k)
    for j in range(k):
        mean_j = 0.0
        for b in range(B):
            mean_j += estimates[b, j]
        mean_j /= B
        total = 0.0
        for i in range(n):
            j_dot = 0.0
            for b in range(B):
                j_dot += membership[b, i]
            j_dot /= B
            c = 0.0
            for b in range(B):
                c += (membership[b, i] - j_dot) * (estimates[b, j] - mean_j)
            c /= B
            total += c * c
        v_raw[j] = 4.0 * (n - 1) / n * total
        spread = 0.0
        for b in range(B):
            spread += (estimates[b, j] - mean_j) ** 2
        v_b[j] = v_raw[j] - n / B ** 2 * spread
    return v_raw, v_b


def ols_normal_equations(xs, y):
    xs = np.asarray(xs, dtype=float)
    return np.linalg.inv(xs.T @ xs) @ xs.T @ np.asarray(y, dtype=float)


def partial_ols_loop(x1, y1, selected):
    """Coefficient of column ``j`` from a separate intercept-plus-``{j} | S`` fit, for every ``j``."""
    x1 = np.asarray(x1, dtype=float)
    m, p = x1.shape
    sel = sorted(int(s) for s in selected)
    out = np.zeros(p)
    for j in range(p):
        cols = [j] + [s for s in sel if s != j]
        design = np.column_stack([np.ones(m), x1[:, cols]])
        out[j] = ols_normal_equations(design, y1)[1]
    return out


def kkt_violation(x, y, beta, lam):
    """Largest violation of the LASSO optimality conditions (0 at an exact solution)."""
    x = np.asarray(x, dtype=float)
    grad = x.T @ (np.asarray(y, dtype=float) - x @ beta) / x.shape[0]
    active = beta != 0
    viol_active = np.abs(grad[active] - lam * np.sign(beta[active]))
    viol_inactive = np.maximum(np.abs(grad[~active]) - lam, 0.0)
    return float(max(viol_active.max(initial=0.0), viol_inactive.max(initial=0.0)))
