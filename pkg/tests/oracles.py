"""Brute-force reference implementations used as test oracles.

Nothing here imports the package under test: every quantity is recomputed
from its definition with plain numpy / scipy.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import minimize_scalar


def random_instance(rng, n, p, k_true=None, noise=1.0, rho=0.3):
    """Correlated Gaussian design with a sparse signal."""
    C = rho ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    X = rng.standard_normal((n, p)) @ np.linalg.cholesky(C).T
    beta = np.zeros(p)
    k_true = k_true or max(1, p // 3)
    beta[rng.choice(p, k_true, replace=False)] = rng.choice([-1.0, 1.0], k_true) * rng.uniform(0.5, 2.0, k_true)
    y = X @ beta + noise * rng.standard_normal(n)
    X = X - X.mean(0)
    X = X / X.std(0, ddof=1)
    return X, y - y.mean()


def ridge_fit(X, y, gamma, S):
    """Restricted ridge solution (full length) and objective, via residuals."""
    beta = np.zeros(X.shape[1])
    S = list(S)
    if S:
        XS = X[:, S]
        beta[S] = np.linalg.solve(XS.T @ XS + 0.5 * gamma * np.eye(len(S)), XS.T @ y)
    r = y - X @ beta
    return beta, float(r @ r + 0.5 * gamma * beta @ beta)


def enum_best(X, y, gamma, tau):
    """Exhaustive search over all supports of size <= tau: (value, support, beta)."""
    p = X.shape[1]
    best = (np.inf, (), None)
    for s in range(0, tau + 1):
        for S in itertools.combinations(range(p), s):
            beta, v = ridge_fit(X, y, gamma, S)
            if v < best[0]:
                best = (v, S, beta)
    return best


def enum_all(X, y, gamma, tau):
    """All (value, support) pairs sorted by value (for tie inspection)."""
    p = X.shape[1]
    out = []
    for s in range(0, tau + 1):
        for S in itertools.combinations(range(p), s):
            out.append((ridge_fit(X, y, gamma, S)[1], S))
    return sorted(out)


def enum_fold_errors(X, y, folds, gamma, tau):
    """Exact partial CV errors h_j via enumeration on each leave-fold-out slice."""
    hs, betas = [], []
    for f in folds:
        keep = np.setdiff1d(np.arange(X.shape[0]), f)
        _, _, beta = enum_best(X[keep], y[keep], gamma, tau)
        r = y[f] - X[f] @ beta
        hs.append(float(r @ r))
        betas.append(beta)
    return np.array(hs), betas


def naive_gram(X):
    n, p = X.shape
    G = np.zeros((p, p))
    for a in range(p):
        for b in range(p):
            s = 0.0
            for i in range(n):
                s += X[i, a] * X[i, b]
            G[a, b] = s
    return G


def two_pass_standardize(X, y):
    X = np.array(X, dtype=float)
    n = X.shape[0]
    mean = X.sum(0) / n
    D = X - mean
    var = (D * D).sum(0) / (n - 1)
    out = np.zeros_like(X)
    ok = var > 0
    out[:, ok] = D[:, ok] / np.sqrt(var[ok])
    y = np.asarray(y, dtype=float)
    return out, y - y.sum() / n


def relax_value_p2_tau1(X, y, gamma, grid=4001):
    """Perspective relaxation value for p = 2, tau = 1 by a 1-D search over z1 (z2 = 1 - z1).

    For fixed z the inner problem is a ridge system with weights 1/z_i; the
    budget binds at the optimum, so the slice z1 + z2 = 1 suffices. Also
    checks the single-coordinate corners z = e_1, e_2.
    """
    G, c, yy = X.T @ X, X.T @ y, float(y @ y)

    def value(z1):
        z = np.array([z1, 1.0 - z1])
        A = G + 0.5 * gamma * np.diag(1.0 / z)
        b = np.linalg.solve(A, c)
        return yy - c @ b

    def corner(i):
        return yy - c[i] ** 2 / (G[i, i] + 0.5 * gamma)

    zs = np.linspace(1e-9, 1 - 1e-9, grid)
    vals = np.array([value(z) for z in zs])
    i = int(np.argmin(vals))
    lo, hi = zs[max(i - 1, 0)], zs[min(i + 1, grid - 1)]
    res = minimize_scalar(value, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return min(float(res.fun), float(vals.min()), corner(0), corner(1))
