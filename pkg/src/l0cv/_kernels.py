"""Compiled inner loops for the perspective relaxation.

Everything works on Gram data ``G = X'X``, ``c = X'y``, ``yy = y'y`` so the cost
per iteration is O(p^2) independent of n. A boolean ``one`` mask marks
coordinates pinned to z=1 (plain ridge penalty, outside the budget); the
remaining coordinates share the budget ``tau``.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_JIT = dict(cache=True, nogil=True)


@nb.njit(**_JIT)
def top_sum(v, k):
    """Sum of the ``k`` largest entries of ``v``."""
    m = v.size
    if k <= 0 or m == 0:
        return 0.0
    if k >= m:
        return v.sum()
    s = np.sort(v)
    return s[m - k :].sum()


@nb.njit(**_JIT)
def water_fill(b, tau):
    """min over z in [0,1]^p, sum z <= tau of sum b_i^2 / z_i, and the minimizing z."""
    p = b.size
    a = np.abs(b)
    z = np.zeros(p)
    nnz = 0
    for i in range(p):
        if a[i] > 0.0:
            nnz += 1
    if nnz <= tau:
        val = 0.0
        for i in range(p):
            if a[i] > 0.0:
                z[i] = 1.0
                val += a[i] * a[i]
        return val, z
    order = np.argsort(-a)
    # suffix sums accumulated from the small end: no cancellation, and suffix[m] >= a[order[m]]
    suffix = np.zeros(p + 1)
    for r in range(p - 1, -1, -1):
        suffix[r] = suffix[r + 1] + a[order[r]]
    for m in range(tau):
        s = suffix[m] / (tau - m)
        if a[order[m]] <= s:
            val = 0.0
            for r in range(m):
                i = order[r]
                z[i] = 1.0
                val += a[i] * a[i]
            for r in range(m, p):
                i = order[r]
                z[i] = min(1.0, a[i] / s)
            return val + suffix[m] * suffix[m] / (tau - m), z
    # tau == 0 with nonzero b: infeasible
    return np.inf, z


@nb.njit(**_JIT)
def prox_free(v, lam, tau):
    """argmin_b 0.5||b - v||^2 + (lam/2) * water_fill(b, tau)."""
    p = v.size
    out = np.zeros(p)
    if tau <= 0:
        return out
    a = np.abs(v)
    nnz = 0
    amin = np.inf
    for i in range(p):
        if a[i] > 0.0:
            nnz += 1
            if a[i] < amin:
                amin = a[i]
    if nnz <= tau:
        for i in range(p):
            out[i] = v[i] / (1.0 + lam)
        return out
    # z_i(s) = clip(a_i s - lam, 0, 1) is nondecreasing in s; solve sum z = tau.
    lo = 0.0
    hi = (1.0 + lam) / amin
    for _ in range(200):
        s = 0.5 * (lo + hi)
        tot = 0.0
        for i in range(p):
            zi = a[i] * s - lam
            if zi > 1.0:
                zi = 1.0
            if zi > 0.0:
                tot += zi
        if tot > tau:
            hi = s
        else:
            lo = s
        if hi - lo <= 1e-15 * hi:
            break
    s = 0.5 * (lo + hi)
    for i in range(p):
        zi = a[i] * s - lam
        if zi > 1.0:
            zi = 1.0
        if zi > 0.0:
            out[i] = v[i] * zi / (zi + lam)
    return out


@nb.njit(**_JIT)
def penalty(beta, one, tau):
    """Pinned coordinates pay beta^2; free coordinates pay the water-filled term."""
    p = beta.size
    nfree = 0
    for i in range(p):
        if not one[i]:
            nfree += 1
    bf = np.empty(nfree)
    acc = 0.0
    r = 0
    for i in range(p):
        if one[i]:
            acc += beta[i] * beta[i]
        else:
            bf[r] = beta[i]
            r += 1
    val, zf = water_fill(bf, tau)
    z = np.ones(p)
    r = 0
    for i in range(p):
        if not one[i]:
            z[i] = zf[r]
            r += 1
    return acc + val, z


@nb.njit(**_JIT)
def dual_value(G, c, yy, gamma, tau, one, beta):
    """Fenchel dual objective at alpha = 2(y - X beta); a valid lower bound for any beta."""
    Gb = G @ beta
    w = 2.0 * (c - Gb)
    w2 = w * w
    nfree = 0
    for i in range(w.size):
        if not one[i]:
            nfree += 1
    wf = np.empty(nfree)
    pinned = 0.0
    r = 0
    for i in range(w.size):
        if one[i]:
            pinned += w2[i]
        else:
            wf[r] = w2[i]
            r += 1
    return yy - beta @ Gb - (pinned + top_sum(wf, tau)) / (2.0 * gamma), w


@nb.njit(**_JIT)
def primal_value(G, c, yy, gamma, tau, one, beta):
    pen, z = penalty(beta, one, tau)
    return beta @ (G @ beta) - 2.0 * (c @ beta) + yy + 0.5 * gamma * pen, z


@nb.njit(**_JIT)
def _prox(v, lam, tau, one):
    p = v.size
    out = np.empty(p)
    nfree = 0
    for i in range(p):
        if not one[i]:
            nfree += 1
    vf = np.empty(nfree)
    r = 0
    for i in range(p):
        if one[i]:
            out[i] = v[i] / (1.0 + lam)
        else:
            vf[r] = v[i]
            r += 1
    bf = prox_free(vf, lam, tau)
    r = 0
    for i in range(p):
        if not one[i]:
            out[i] = bf[r]
            r += 1
    return out


@nb.njit(**_JIT)
def solve_relaxation(G, c, yy, gamma, tau, one, beta0, lipschitz, tol, maxit, cutoff, check_every):
    """Accelerated proximal gradient with adaptive restart.

    Returns ``(beta, beta_dual, primal, dual, iterations, status)``; the dual
    bound is attained at ``alpha = 2(y - X beta_dual)``. Status is
    0 = gap target met, 1 = dual exceeded ``cutoff`` (node can be pruned),
    2 = iteration cap.
    """
    p = c.size
    step = 1.0 / lipschitz
    lam = step * gamma
    x = beta0.copy()
    yv = x.copy()
    tk = 1.0
    best_x = x.copy()
    best_p, _ = primal_value(G, c, yy, gamma, tau, one, x)
    best_d, _ = dual_value(G, c, yy, gamma, tau, one, x)
    best_dx = x.copy()
    if best_p - best_d <= tol * max(1.0, abs(best_p)):
        return best_x, best_dx, best_p, best_d, 0, 0
    if best_d > cutoff:
        return best_x, best_dx, best_p, best_d, 0, 1
    for it in range(1, maxit + 1):
        grad = 2.0 * (G @ yv - c)
        xn = _prox(yv - step * grad, lam, tau, one)
        diff = xn - x
        if np.dot(yv - xn, diff) > 0.0:
            tk = 1.0
            yv = xn.copy()
        else:
            tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            yv = xn + ((tk - 1.0) / tn) * diff
            tk = tn
        x = xn
        if it % check_every == 0 or it == maxit:
            pv, _ = primal_value(G, c, yy, gamma, tau, one, x)
            dv, _ = dual_value(G, c, yy, gamma, tau, one, x)
            if pv < best_p:
                best_p = pv
                best_x = x.copy()
            if dv > best_d:
                best_d = dv
                best_dx = x.copy()
            if best_p - best_d <= tol * max(1.0, abs(best_p)):
                return best_x, best_dx, best_p, best_d, it, 0
            if best_d > cutoff:
                return best_x, best_dx, best_p, best_d, it, 1
    return best_x, best_dx, best_p, best_d, maxit, 2
