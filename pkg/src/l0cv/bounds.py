"""Bounds on held-out predictions and partial cross-validation errors.

Two ellipsoids are available around a leave-fold-out relaxation:

``"ridge"``
    The classical closed form: center ``beta_persp``, metric ``X'X + (gamma/2) I``,
    squared radius ``u_bar - dual``. Fast and usually tight, but not a
    guaranteed enclosure of the MIO solution: the relaxed penalty has no
    curvature along some directions, so the ``gamma/2`` shift is not always
    earned.
``"certified"`` (default)
    Intersection of two enclosures that always hold: metric ``X'X`` around the
    relaxation (radius corrected for the solver's own gap), and metric
    ``X'X + (gamma/2) I`` around the unrestricted ridge solution with squared
    radius ``u_bar - ridge_min``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import brentq

from .errors import ConfigurationError, NumericError
from .linalg import GramData, GramMetric, RegGram, _from_gram, quad_form_inv
from .relax import RelaxSolution

__all__ = [
    "PredictionInterval",
    "BoundCell",
    "SliceGeometry",
    "ellipsoid_slack",
    "certified_radius_sq",
    "prediction_interval",
    "certified_interval",
    "pointwise_error_bounds",
    "trust_region_error_range",
    "aggregated_fold_bounds",
    "training_error_lower_bound",
    "compute_bounds",
    "METRICS",
]

log = logging.getLogger(__name__)

METRICS = ("certified", "ridge")


@dataclass(frozen=True)
class PredictionInterval:
    lo: float
    hi: float
    center: float
    halfwidth: float

    def __contains__(self, value) -> bool:
        return self.lo <= value <= self.hi


@dataclass(frozen=True)
class BoundCell:
    tau: int
    fold: int
    zeta_L: float
    zeta_U: float
    exact: bool
    h_estimate: float
    incumbent_value: float
    support: tuple[int, ...] = ()
    nodes: int = 0
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def width(self) -> float:
        return self.zeta_U - self.zeta_L

    def clipped_estimate(self) -> float:
        """The estimate pulled into the certified interval (exact cells return their value)."""
        if self.exact:
            return self.h_estimate
        return min(max(self.h_estimate, self.zeta_L), self.zeta_U)

    def mark_exact(self, h: float, support, nodes: int = 0) -> "BoundCell":
        return replace(self, zeta_L=h, zeta_U=h, exact=True, h_estimate=h,
                       support=tuple(int(i) for i in support), nodes=nodes)


class SliceGeometry:
    """Per-(slice, gamma) matrices shared by every tau: they do not depend on the budget."""

    def __init__(self, data: GramData, gamma: float):
        self.data = data
        self.gamma = float(gamma)
        self.reg: RegGram = _from_gram(data.G, gamma)
        L = self.reg.chol
        t = solve_triangular(L, data.c, lower=True, check_finite=False)
        self.ridge_beta = solve_triangular(L, t, lower=True, trans="T", check_finite=False)
        self.ridge_min = float(data.yy - data.c @ self.ridge_beta)
        self._gram = None

    @property
    def gram(self) -> GramMetric:
        if self._gram is None:
            self._gram = GramMetric(self.data.G)
        return self._gram

    def reg_quad(self, X_rows: np.ndarray) -> np.ndarray:
        """Row-wise ``x' (X'X + gamma/2 I)^{-1} x``."""
        T = solve_triangular(self.reg.chol, np.atleast_2d(X_rows).T, lower=True, check_finite=False)
        return np.einsum("ij,ij->j", T, T)

    def gram_quad(self, X_rows: np.ndarray) -> np.ndarray:
        return np.array([self.gram.quad_form_inv(x) for x in np.atleast_2d(X_rows)])


def ellipsoid_slack(rel: RelaxSolution, u_bar: float) -> float:
    """``max(0, u_bar - dual)``; the squared radius of the ridge-metric ellipsoid."""
    slack = u_bar - rel.dual_value
    if slack < 0:
        log.warning("upper bound %.6g is below the relaxation bound %.6g; clamping slack to 0", u_bar, rel.dual_value)
        return 0.0
    return float(slack)


def certified_radius_sq(rel: RelaxSolution, u_bar: float) -> float:
    """Squared ``X'X``-radius that provably encloses every support-feasible point with value <= ``u_bar``.

    ``sqrt(u_bar - dual)`` bounds the distance from the exact relaxation
    minimizer; ``sqrt(primal - dual)`` bounds how far the returned iterate is
    from that minimizer.
    """
    a = math.sqrt(max(0.0, u_bar - rel.dual_value))
    b = math.sqrt(max(0.0, rel.primal_value - rel.dual_value))
    return (a + b) ** 2


def prediction_interval(x, rel: RelaxSolution, G: RegGram, u_bar: float, slack: float | None = None) -> PredictionInterval:
    """Closed-form interval ``x'beta_persp +- sqrt(x' A^{-1} x * slack)``."""
    x = np.asarray(x, dtype=float)
    s = ellipsoid_slack(rel, u_bar) if slack is None else max(0.0, float(slack))
    center = float(x @ rel.beta)
    hw = math.sqrt(max(0.0, quad_form_inv(G, x)) * s)
    return PredictionInterval(lo=center - hw, hi=center + hw, center=center, halfwidth=hw)


def _intersect(center: float, pieces) -> PredictionInterval:
    lo = max(c - h for c, h in pieces)
    hi = min(c + h for c, h in pieces)
    if lo > hi:
        # Both enclosures contain the same point, so this only happens by rounding.
        mid = 0.5 * (lo + hi)
        lo = hi = mid
    c = min(max(center, lo), hi)
    return PredictionInterval(lo=lo, hi=hi, center=c, halfwidth=0.5 * (hi - lo))


def certified_interval(x, rel: RelaxSolution, geom: SliceGeometry, u_bar: float) -> PredictionInterval:
    x = np.asarray(x, dtype=float)
    pieces = []
    ridge_slack = max(0.0, u_bar - geom.ridge_min)
    pieces.append((float(x @ geom.ridge_beta), math.sqrt(float(geom.reg_quad(x)[0]) * ridge_slack)))
    q = geom.gram.quad_form_inv(x)
    if math.isfinite(q):
        pieces.append((float(x @ rel.beta), math.sqrt(q * certified_radius_sq(rel, u_bar))))
    return _intersect(float(x @ rel.beta), pieces)


def pointwise_error_bounds(y_i: float, interval: PredictionInterval) -> tuple[float, float]:
    """Range of ``(y_i - t)^2`` for ``t`` in the interval: ``(lo_err, hi_err)``."""
    lo, hi = interval.lo, interval.hi
    hi_err = max((y_i - lo) ** 2, (y_i - hi) ** 2)
    if y_i < lo:
        lo_err = (y_i - lo) ** 2
    elif y_i > hi:
        lo_err = (hi - y_i) ** 2
    else:
        lo_err = 0.0
    return lo_err, hi_err


def trust_region_error_range(B: np.ndarray, e: np.ndarray, r2: float, rtol: float = 1e-12) -> tuple[float, float]:
    """Certified min and max of ``||e - B u||^2`` over ``||u||^2 <= r2``.

    After a thin SVD both problems are diagonal trust-region subproblems. The
    multiplier is found by a bracketed root solve of the secular equation, and
    the returned numbers are Lagrangian dual values at that multiplier, so they
    are valid bounds even if the root is slightly off.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    e = np.asarray(e, dtype=float).ravel()
    total = float(e @ e)
    if r2 <= 0 or not np.any(B):
        return total, total
    r = math.sqrt(r2)
    U, sig, _ = np.linalg.svd(B, full_matrices=False)
    keep = sig > rtol * sig[0]
    U, sig = U[:, keep], sig[keep]
    et = U.T @ e
    rest = max(0.0, total - float(et @ et))
    se2 = (sig * et) ** 2
    s2 = sig**2

    # minimum: s_k = sig_k et_k / (sig_k^2 + lam)
    def norm_min(lam):
        return float(np.sum(se2 / (s2 + lam) ** 2))

    if norm_min(0.0) <= r2:
        lo = rest
    else:
        lam_hi = math.sqrt(float(se2.sum())) / r
        lam = brentq(lambda t: norm_min(t) - r2, 0.0, lam_hi * (1 + 1e-12) + 1e-300, xtol=1e-14, rtol=1e-14, maxiter=500)
        lo = float(np.sum(et**2 * lam / (s2 + lam))) + rest - lam * r2
        if not math.isfinite(lo):
            raise NumericError("secular equation for the lower bound did not converge")
        lo = max(0.0, lo)

    # maximum: s_k = -sig_k et_k / (mu - sig_k^2), mu > sig_max^2
    smax = float(s2.max())

    def upper(mu):
        return float(np.sum(et**2 * mu / (mu - s2))) + rest + mu * r2

    mu_lo = smax * (1.0 + 1e-12) + 1e-300
    gap = lambda mu: float(np.sum(se2 / (mu - s2) ** 2)) - r2
    if gap(mu_lo) <= 0:
        mu = mu_lo  # hard case: the top eigen-direction is orthogonal to e
    else:
        mu_hi = smax + math.sqrt(float(se2.sum())) / r
        mu = brentq(gap, mu_lo, mu_hi * (1 + 1e-12) + 1e-300, xtol=1e-14 * smax, rtol=1e-14, maxiter=500)
    hi = upper(mu)
    if not math.isfinite(hi):
        raise NumericError("secular equation for the upper bound did not converge")
    return lo, max(hi, lo)


def aggregated_fold_bounds(rel: RelaxSolution, geom: SliceGeometry, u_bar: float, X_fold, y_fold,
                           metric: str = "certified") -> tuple[float, float]:
    """Range of the fold error ``sum_i (y_i - x_i'b)^2`` over the whole ellipsoid (not point by point)."""
    X_fold = np.atleast_2d(np.asarray(X_fold, dtype=float))
    y_fold = np.asarray(y_fold, dtype=float).ravel()
    _check_metric(metric)
    ranges = []
    if metric == "ridge":
        B = solve_triangular(geom.reg.chol, X_fold.T, lower=True, check_finite=False).T
        ranges.append(trust_region_error_range(B, y_fold - X_fold @ rel.beta, ellipsoid_slack(rel, u_bar)))
    else:
        B = solve_triangular(geom.reg.chol, X_fold.T, lower=True, check_finite=False).T
        ranges.append(trust_region_error_range(B, y_fold - X_fold @ geom.ridge_beta, max(0.0, u_bar - geom.ridge_min)))
        if geom.gram.full_rank:
            B = X_fold @ geom.gram.whiten()
            ranges.append(trust_region_error_range(B, y_fold - X_fold @ rel.beta, certified_radius_sq(rel, u_bar)))
    lo = max(r[0] for r in ranges)
    hi = min(r[1] for r in ranges)
    return lo, max(lo, hi)


def training_error_lower_bound(v_bar: float, u: float) -> float:
    """``v_bar - u``: full-data lower bound minus a feasible leave-fold-out objective (may be negative)."""
    return float(v_bar - u)


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise ConfigurationError(f"unknown bound metric {metric!r}; expected one of {METRICS}")


def fold_intervals(X_fold, rel: RelaxSolution, geom: SliceGeometry, u: float, metric: str = "certified"):
    """Vectorized prediction intervals for every row of ``X_fold``; returns (lo, hi, center)."""
    X_fold = np.atleast_2d(X_fold)
    center = X_fold @ rel.beta
    if metric == "ridge":
        hw = np.sqrt(np.maximum(geom.reg_quad(X_fold), 0.0) * ellipsoid_slack(rel, u))
        return center - hw, center + hw, center
    rc = X_fold @ geom.ridge_beta
    rh = np.sqrt(np.maximum(geom.reg_quad(X_fold), 0.0) * max(0.0, u - geom.ridge_min))
    lo, hi = rc - rh, rc + rh
    q = geom.gram_quad(X_fold)
    finite = np.isfinite(q)
    if finite.any():
        gh = np.sqrt(np.where(finite, q, 0.0) * certified_radius_sq(rel, u))
        lo = np.where(finite, np.maximum(lo, center - gh), lo)
        hi = np.where(finite, np.minimum(hi, center + gh), hi)
    bad = lo > hi
    if bad.any():
        mid = 0.5 * (lo + hi)
        lo, hi = np.where(bad, mid, lo), np.where(bad, mid, hi)
    return lo, hi, np.clip(center, lo, hi)


def compute_bounds(X_fold, y_fold, rel: RelaxSolution, v_bar: float, u: float, geom: SliceGeometry, *,
                   tau: int, fold: int, v: float | None = None, support=(), metric: str = "certified",
                   aggregated: bool = False) -> BoundCell:
    """Interval on the partial CV error of one (tau, fold) cell from relaxations only.

    Upper bound: sum of per-point worst-case errors. Lower bound: the best of
    0, ``v_bar - u`` and the sum of per-point best-case errors. ``v`` is
    accepted for call compatibility only; the certificate stored
    in ``rel`` is what is used.
    """
    _check_metric(metric)
    X_fold = np.atleast_2d(np.asarray(X_fold, dtype=float))
    y_fold = np.asarray(y_fold, dtype=float).ravel()
    if v is not None and u < v:
        log.warning("incumbent %.6g below relaxation value %.6g (tolerance mismatch); slack clamped", u, v)
    lo, hi, _ = fold_intervals(X_fold, rel, geom, u, metric)
    above = y_fold > hi
    below = y_fold < lo
    lo_err = np.where(below, (y_fold - lo) ** 2, np.where(above, (y_fold - hi) ** 2, 0.0))
    hi_err = np.maximum((y_fold - lo) ** 2, (y_fold - hi) ** 2)
    zeta_U = float(hi_err.sum())
    zeta_L = max(0.0, training_error_lower_bound(v_bar, u), float(lo_err.sum()))
    if aggregated:
        a_lo, a_hi = aggregated_fold_bounds(rel, geom, u, X_fold, y_fold, metric)
        zeta_L = max(zeta_L, a_lo)
        zeta_U = min(zeta_U, a_hi)
    h_est = float(np.sum((y_fold - X_fold @ rel.beta) ** 2))
    zeta_U = max(zeta_U, zeta_L)
    return BoundCell(tau=int(tau), fold=int(fold), zeta_L=zeta_L, zeta_U=zeta_U, exact=False, h_estimate=h_est,
                     incumbent_value=float(u), support=tuple(int(i) for i in support))
