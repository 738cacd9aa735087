"""Compiled coordinate-descent kernels for the elastic-net objective.

All kernels work on the covariance form of the problem: with standardized
design ``Z`` (n rows) and centered target ``yc`` they take

    gram = Z.T @ Z / n,   corr = Z.T @ yc / n,   yy = yc @ yc / n

so one coordinate update costs O(p) regardless of n.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def soft_threshold(z, gamma):
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


@njit(cache=True)
def objective(gram, corr, yy, beta, lam, alpha):
    p = beta.shape[0]
    quad = 0.0
    lin = 0.0
    l1 = 0.0
    l2 = 0.0
    for j in range(p):
        bj = beta[j]
        if bj == 0.0:
            continue
        lin += corr[j] * bj
        l1 += abs(bj)
        l2 += bj * bj
        s = 0.0
        for k in range(p):
            s += gram[j, k] * beta[k]
        quad += bj * s
    loss = 0.5 * (yy - 2.0 * lin + quad)
    return loss + lam * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)


@njit(cache=True)
def cd_solve(gram, corr, yy, beta, lam, alpha, tol, max_sweeps, trace):
    """Cyclic coordinate descent in place on ``beta``.

    Returns (n_sweeps, converged). When ``trace`` has length >= max_sweeps
    the objective after every sweep is written to it.
    """
    p = beta.shape[0]
    # grad[j] = corr[j] - (gram @ beta)[j], kept current across updates
    grad = corr.copy()
    for k in range(p):
        bk = beta[k]
        if bk != 0.0:
            for j in range(p):
                grad[j] -= gram[j, k] * bk
    l1 = lam * alpha
    denom_l2 = lam * (1.0 - alpha)
    record = trace.shape[0] >= max_sweeps
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            gjj = gram[j, j]
            old = beta[j]
            z = grad[j] + gjj * old
            new = soft_threshold(z, l1) / (gjj + denom_l2)
            if new != old:
                delta = new - old
                beta[j] = new
                for k in range(p):
                    grad[k] -= gram[k, j] * delta
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if record:
            trace[sweep] = objective(gram, corr, yy, beta, lam, alpha)
        if max_change < tol:
            return sweep + 1, True
    return max_sweeps, False


@njit(cache=True)
def cd_path(gram, corr, yy, lambdas, alpha, tol, max_sweeps):
    """Warm-started solutions along a decreasing lambda sequence.

    Returns (coefs [n_lambda, p], sweeps [n_lambda], converged [n_lambda]).
    """
    p = corr.shape[0]
    n_lam = lambdas.shape[0]
    coefs = np.zeros((n_lam, p))
    sweeps = np.zeros(n_lam, dtype=np.int64)
    converged = np.zeros(n_lam, dtype=np.bool_)
    beta = np.zeros(p)
    no_trace = np.zeros(0)
    for i in range(n_lam):
        s, ok = cd_solve(gram, corr, yy, beta, lambdas[i], alpha, tol, max_sweeps, no_trace)
        coefs[i, :] = beta
        sweeps[i] = s
        converged[i] = ok
    return coefs, sweeps, converged
