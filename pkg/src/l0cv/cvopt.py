"""Hyperparameter search over the sparsity budget and ridge weight.

``tau_search`` keeps an interval on every partial CV error ``h_j(gamma, tau)``
built from perspective relaxations, and only solves a leave-fold-out MIO
where that interval still matters. ``grid_search_tau`` is the brute-force
baseline that solves every cell. ``coordinate_descent`` alternates the two
coordinates using ``optimize_gamma`` for the continuous one.

Cross-validation errors are reported on the ``(1/n) sum_j h_j`` scale.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .bounds import BoundCell, SliceGeometry, compute_bounds
from .data import Dataset, FoldPartition
from .errors import ConfigurationError
from .linalg import GramData, factor, ridge_on_support
from .mio import OPTIMAL, MioOptions, solve_mio_gram
from .relax import RelaxOptions, greedy_round, local_search, solve_perspective_gram

__all__ = [
    "GAMMA_MIN",
    "GAMMA_MAX",
    "SolveStats",
    "BoundTable",
    "CVProblem",
    "GridResult",
    "TauSearchResult",
    "CdOptions",
    "CdState",
    "tau_max_default",
    "grid_search_tau",
    "tau_search",
    "gamma_objective",
    "optimize_gamma",
    "coordinate_descent",
]

log = logging.getLogger(__name__)

GAMMA_MIN, GAMMA_MAX = 1e-3, 1e1


@dataclass
class SolveStats:
    mio_count: int = 0
    node_count: int = 0
    relax_count: int = 0
    wall_time: float = 0.0

    def add(self, other: "SolveStats") -> None:
        self.mio_count += other.mio_count
        self.node_count += other.node_count
        self.relax_count += other.relax_count
        self.wall_time += other.wall_time

    def as_dict(self) -> dict:
        return {"mio_count": self.mio_count, "node_count": self.node_count,
                "relax_count": self.relax_count, "wall_time": self.wall_time}


def tau_max_default(n: int, p: int) -> int:
    """Largest ``t >= 2`` with ``t ln t <= min(n, p)``.

    >>> tau_max_default(100, 200)
    29
    """
    m = min(int(n), int(p))
    t = 2
    while (t + 1) * math.log(t + 1) <= m:
        t += 1
    return t


class CVProblem:
    """A dataset split into folds, with the Gram statistics of every leave-fold-out slice."""

    def __init__(self, dataset: Dataset, folds: FoldPartition):
        if folds.n != dataset.n:
            raise ConfigurationError(f"fold partition covers {folds.n} rows but the dataset has {dataset.n}")
        self.dataset = dataset
        self.folds = folds
        self.X, self.y = dataset.X, dataset.y
        self.n, self.p, self.k = dataset.n, dataset.p, folds.k
        self.full = GramData.from_xy(self.X, self.y)
        self.fold_X = [self.X[f] for f in folds.folds]
        self.fold_y = [self.y[f] for f in folds.folds]
        self.slices = [self.full.without(Xf, yf) for Xf, yf in zip(self.fold_X, self.fold_y)]
        self._geom: dict[tuple[int, float], SliceGeometry] = {}

    def geometry(self, j: int, gamma: float) -> SliceGeometry:
        key = (j, float(gamma))
        g = self._geom.get(key)
        if g is None:
            g = self._geom[key] = SliceGeometry(self.slices[j], gamma)
        return g

    def fold_error(self, j: int, beta) -> float:
        r = self.fold_y[j] - self.fold_X[j] @ beta
        return float(r @ r)

    def check_taus(self, taus) -> list[int]:
        taus = [int(t) for t in taus]
        if not taus:
            raise ConfigurationError("tau range is empty")
        bad = [t for t in taus if not 1 <= t <= self.p]
        if bad:
            raise ConfigurationError(f"tau values {bad} outside [1, {self.p}]")
        return taus


def _as_problem(dataset, folds) -> CVProblem:
    return dataset if isinstance(dataset, CVProblem) else CVProblem(dataset, folds)


def _tau_range(tau_range, problem: CVProblem) -> list[int]:
    if tau_range is None:
        lo, hi = 2, tau_max_default(problem.n, problem.p)
        return problem.check_taus(range(min(lo, problem.p), min(hi, problem.p) + 1))
    if isinstance(tau_range, tuple) and len(tau_range) == 2:
        lo, hi = tau_range
        if lo > hi:
            raise ConfigurationError(f"tau range is empty: tau_min={lo} > tau_max={hi}")
        return problem.check_taus(range(lo, hi + 1))
    return problem.check_taus(tau_range)


@dataclass
class GridResult:
    tau_star: int
    h: dict
    stats: SolveStats
    betas: dict = field(default_factory=dict, repr=False)
    partial: bool = False


def grid_search_tau(dataset, folds, gamma: float, tau_range=None, exact: bool = True,
                    mio: MioOptions | None = None, time_budget: float | None = None) -> GridResult:
    """Solve the leave-fold-out problem for every (tau, fold) cell and return the CV argmin.

    With ``exact=False`` each cell uses the rounded relaxation instead of an MIO.
    """
    P = _as_problem(dataset, folds)
    taus = _tau_range(tau_range, P)
    mio = mio or MioOptions()
    stats = SolveStats()
    t0 = time.perf_counter()
    h, betas = {}, {}
    partial = False
    for tau in taus:
        total = 0.0
        for j in range(P.k):
            if time_budget is not None and time.perf_counter() - t0 > time_budget:
                partial = True
                break
            if exact:
                sol = solve_mio_gram(P.slices[j], gamma, tau, mio)
                stats.mio_count += 1
                stats.node_count += sol.nodes
                beta = sol.beta
            else:
                rel = solve_perspective_gram(P.slices[j], gamma, tau, RelaxOptions(tol=mio.relax_tol))
                stats.relax_count += 1
                beta, _, _ = greedy_round(rel, P.slices[j], gamma, tau)
            betas[(tau, j)] = beta
            total += P.fold_error(j, beta)
        if partial:
            break
        h[tau] = total / P.n
    stats.wall_time = time.perf_counter() - t0
    if not h:
        return GridResult(tau_star=taus[0], h=h, stats=stats, betas=betas, partial=True)
    tau_star = min(h, key=lambda t: (h[t], t))
    return GridResult(tau_star=tau_star, h=h, stats=stats, betas=betas, partial=partial)


class BoundTable:
    """Interval ``[zeta_L, zeta_U]`` on each ``h_j(gamma, tau)``; a single owner updates it."""

    def __init__(self, taus, k: int):
        self.taus = list(taus)
        self.k = k
        self.cells: dict[tuple[int, int], BoundCell] = {}

    def __len__(self) -> int:
        return len(self.cells)

    def __getitem__(self, key) -> BoundCell:
        return self.cells[key]

    def __setitem__(self, key, cell: BoundCell) -> None:
        self.cells[key] = cell

    def row(self, tau: int) -> list[BoundCell]:
        return [self.cells[(tau, j)] for j in range(self.k)]

    def lower_sum(self, tau: int) -> float:
        return sum(c.zeta_L for c in self.row(tau))

    def upper_sum(self, tau: int) -> float:
        return sum(c.zeta_U for c in self.row(tau))

    def estimate_sum(self, tau: int) -> float:
        return sum(c.clipped_estimate() for c in self.row(tau))

    def bounds(self) -> tuple[float, float]:
        return min(self.lower_sum(t) for t in self.taus), min(self.upper_sum(t) for t in self.taus)

    def exact_count(self) -> int:
        return sum(c.exact for c in self.cells.values())


@dataclass
class TauSearchResult:
    tau_star: int
    LB: float
    UB: float
    table: BoundTable = field(repr=False)
    stats: SolveStats
    trace: list = field(default_factory=list, repr=False)
    status: str = "proved"
    gamma: float = 0.0
    n: int = 1

    @property
    def h(self) -> dict:
        """CV estimate per tau (exact where proven, otherwise clipped to the certified interval)."""
        return {t: self.table.estimate_sum(t) / self.n for t in self.table.taus}

    @property
    def h_star(self) -> float:
        return self.h[self.tau_star]

    @property
    def gap(self) -> float:
        return (self.UB - self.LB) / max(self.UB, 1e-12)

    def supports(self, tau: int | None = None) -> list[tuple[int, ...]]:
        tau = self.tau_star if tau is None else tau
        return [c.support for c in self.table.row(tau)]

    def all_exact(self, tau: int | None = None) -> bool:
        tau = self.tau_star if tau is None else tau
        return all(c.exact for c in self.table.row(tau))


def _phase1_fold(P: CVProblem, j: int, gamma: float, tau: int, warm, v_bar: float, relax_opts: RelaxOptions,
                 gap_tol: float, polish: bool, metric: str):
    data = P.slices[j]
    rel = solve_perspective_gram(data, gamma, tau, relax_opts, beta0=warm)
    beta_u, z_u, u = greedy_round(rel, data, gamma, tau)
    support = np.flatnonzero(z_u)
    if polish:
        support, beta_u, u = local_search(data, gamma, support, u)
    geom = P.geometry(j, gamma)
    cell = compute_bounds(P.fold_X[j], P.fold_y[j], rel, v_bar, u, geom, tau=tau, fold=j,
                          v=rel.dual_value, support=support, metric=metric)
    h_inc = P.fold_error(j, beta_u)
    # the rounded model's own fold error is the estimate we carry
    cell = BoundCell(tau=cell.tau, fold=j, zeta_L=cell.zeta_L, zeta_U=cell.zeta_U, exact=False, h_estimate=h_inc,
                     incumbent_value=u, support=cell.support)
    if u - rel.dual_value <= gap_tol * max(1.0, abs(u)):
        # the rounded support is certified optimal: nothing left to branch on
        cell = cell.mark_exact(h_inc, support)
    return rel, cell


def tau_search(dataset, folds, gamma: float, tau_range=None, epsilon: float = 1e-4, mio_budget: int | None = None,
               mode: str = "exact", mio: MioOptions | None = None, metric: str = "certified",
               polish: bool = True, full_mio: bool = False, threads: int = 1,
               on_iteration=None) -> TauSearchResult:
    """Bound-driven search for the sparsity level minimizing the k-fold error at fixed ``gamma``.

    Phase 1 builds the bound table from relaxations. Phase 2 (``mode="exact"``)
    repeatedly solves the MIO of the widest cell in the row with the smallest
    lower bound until ``(UB - LB) / UB <= epsilon`` or ``mio_budget`` MIOs
    have been solved.

    ``full_mio=True`` also solves the full-data MIO once per ``tau`` so the
    training-error lower bound uses the certified optimum instead of the
    relaxation value; those solves are counted in ``stats.mio_count``.
    """
    if epsilon < 0:
        raise ConfigurationError(f"epsilon must be nonnegative, got {epsilon}")
    if mio_budget is not None and mio_budget < 0:
        raise ConfigurationError(f"mio budget must be nonnegative, got {mio_budget}")
    if mode not in ("exact", "relaxation"):
        raise ConfigurationError(f"mode must be 'exact' or 'relaxation', got {mode!r}")
    if not gamma > 0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    P = _as_problem(dataset, folds)
    taus = _tau_range(tau_range, P)
    mio = mio or MioOptions()
    relax_opts = RelaxOptions(tol=mio.relax_tol)
    stats = SolveStats()
    t0 = time.perf_counter()
    table = BoundTable(taus, P.k)
    rels = {}
    v_bars = {}

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        warm = None
        for tau in taus:
            full = solve_perspective_gram(P.full, gamma, tau, relax_opts, beta0=warm)
            warm = full.beta
            stats.relax_count += 1
            v_bar = full.dual_value
            if full_mio and mode == "exact":
                sol = solve_mio_gram(P.full, gamma, tau, mio, root=full)
                stats.mio_count += 1
                stats.node_count += sol.nodes
                v_bar = max(v_bar, sol.lower)
            v_bars[tau] = v_bar
            args = [(P, j, gamma, tau, full.beta, v_bar, relax_opts, mio.gap_tol, polish, metric) for j in range(P.k)]
            results = pool.map(lambda a: _phase1_fold(*a), args) if pool else (_phase1_fold(*a) for a in args)
            for j, (rel, cell) in enumerate(results):
                rels[(tau, j)] = rel
                table[(tau, j)] = cell
                stats.relax_count += 1
    finally:
        if pool:
            pool.shutdown()

    trace = []
    LB, UB = table.bounds()
    status = "relaxation" if mode == "relaxation" else "proved"

    def emit(event: dict) -> None:
        trace.append(event)
        if on_iteration is not None:
            on_iteration(event)

    emit({"iter": 0, "LB": LB / P.n, "UB": UB / P.n, "mio_count": 0, "exact_cells": table.exact_count()})
    if mode == "exact":
        it = 0
        while (UB - LB) / max(UB, 1e-12) > epsilon:
            if mio_budget is not None and stats.mio_count >= mio_budget:
                status = "budget"
                break
            tau_s = min(taus, key=lambda t: (table.lower_sum(t), t))
            open_cells = [c for c in table.row(tau_s) if not c.exact]
            if not open_cells:
                status = "stalled"
                break
            j_s = max(open_cells, key=lambda c: (c.width, -c.fold)).fold
            cell = table[(tau_s, j_s)]
            rel = rels[(tau_s, j_s)]
            opts = MioOptions(gap_tol=mio.gap_tol, time_limit=mio.time_limit, node_limit=mio.node_limit,
                              warm_start=cell.support, screening=mio.screening, local_search=mio.local_search,
                              relax_tol=mio.relax_tol)
            sol = solve_mio_gram(P.slices[j_s], gamma, tau_s, opts, root=rel)
            stats.mio_count += 1
            stats.node_count += sol.nodes
            if sol.status == OPTIMAL:
                table[(tau_s, j_s)] = cell.mark_exact(P.fold_error(j_s, sol.beta), sol.support, sol.nodes)
            else:
                # not proven: tighten the interval with the better incumbent and revisit later
                upd = compute_bounds(P.fold_X[j_s], P.fold_y[j_s], rel, v_bars[tau_s],
                                     sol.upper, P.geometry(j_s, gamma), tau=tau_s, fold=j_s, v=rel.dual_value,
                                     support=sol.support, metric=metric)
                table[(tau_s, j_s)] = BoundCell(
                    tau=tau_s, fold=j_s, zeta_L=max(cell.zeta_L, upd.zeta_L), zeta_U=min(cell.zeta_U, upd.zeta_U),
                    exact=False, h_estimate=P.fold_error(j_s, sol.beta), incumbent_value=sol.upper,
                    support=tuple(int(i) for i in sol.support), nodes=cell.nodes + sol.nodes)
            LB, UB = table.bounds()
            it += 1
            emit({"iter": it, "tau": tau_s, "fold": j_s, "LB": LB / P.n, "UB": UB / P.n,
                  "mio_count": stats.mio_count, "nodes": sol.nodes, "mio_status": sol.status})
    stats.wall_time = time.perf_counter() - t0
    tau_star = min(taus, key=lambda t: (table.estimate_sum(t), t))
    return TauSearchResult(tau_star=tau_star, LB=LB / P.n, UB=UB / P.n, table=table, stats=stats, trace=trace,
                           status=status, gamma=float(gamma), n=P.n)


def _support_system(data: GramData, gamma: float, S):
    A = data.G[np.ix_(S, S)].copy()
    A[np.diag_indices_from(A)] += 0.5 * gamma
    return factor(A)


def gamma_objective(dataset, folds, supports, gamma: float, second: bool = False):
    """Fixed-support k-fold error ``sum_j ||y_j - X_j beta_j(gamma)||^2`` and its gamma-derivative.

    ``beta_j(gamma)`` is the ridge fit on support ``supports[j]`` of slice ``j``;
    ``d beta / d gamma = -A^{-1} beta / 2``. With ``second=True`` the second
    derivative is returned as a third element.
    """
    if not gamma > 0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    P = _as_problem(dataset, folds)
    if len(supports) != P.k:
        raise ConfigurationError(f"expected {P.k} supports, got {len(supports)}")
    val = d1 = d2 = 0.0
    for j, S in enumerate(supports):
        S = np.asarray(sorted(int(i) for i in S), dtype=int)
        yf = P.fold_y[j]
        if S.size == 0:
            val += float(yf @ yf)
            continue
        L = _support_system(P.slices[j], gamma, S)
        beta = cho_solve((L, True), P.slices[j].c[S], check_finite=False)
        Xf = P.fold_X[j][:, S]
        r = yf - Xf @ beta
        db = -0.5 * cho_solve((L, True), beta, check_finite=False)
        Xdb = Xf @ db
        val += float(r @ r)
        d1 += -2.0 * float(r @ Xdb)
        if second:
            d2b = -cho_solve((L, True), db, check_finite=False)  # = A^{-2} beta / 2
            d2 += 2.0 * float(Xdb @ Xdb) - 2.0 * float(r @ (Xf @ d2b))
    return (val, d1, d2) if second else (val, d1)


def _minimize_log_gamma(f, t0: float, lo: float, hi: float, maxit: int = 100, xtol: float = 1e-10):
    """Safeguarded Newton on ``g'(t) = 0`` in ``t = log gamma`` with a bisection fallback.

    ``f(t)`` returns ``(value, g', g'')`` in ``t``. First walks downhill until
    the derivative changes sign (or a boundary is hit), then refines inside
    the bracket.
    """
    t = min(max(t0, lo), hi)
    _, g1, g2 = f(t)
    if g1 == 0.0:
        return t
    direction = -1.0 if g1 > 0 else 1.0
    step = 0.5
    a = t
    # expand until a sign change of the derivative brackets a stationary point
    for _ in range(maxit):
        b = min(max(a + direction * step, lo), hi)
        if b == a:
            return a
        _, gb, _ = f(b)
        if gb == 0.0:
            return b
        if (gb > 0) == (direction > 0):
            break
        a = b
        step *= 2.0
    else:
        return a
    left, right = (a, b) if a < b else (b, a)
    t = 0.5 * (left + right)
    for _ in range(maxit):
        _, g1, g2 = f(t)
        if g1 == 0.0:
            return t
        if g1 > 0:
            right = t
        else:
            left = t
        if right - left <= xtol:
            break
        t_new = t - g1 / g2 if g2 > 0 else None
        if t_new is None or not left < t_new < right:
            t_new = 0.5 * (left + right)
        t = t_new
    return 0.5 * (left + right)


def optimize_gamma(dataset, folds, supports, gamma_prev: float, n_starts: int = 7,
                   lo: float = GAMMA_MIN, hi: float = GAMMA_MAX) -> float:
    """Minimize the fixed-support k-fold error over ``gamma in [lo, hi]``.

    Starts from ``gamma_prev`` and ``n_starts`` log-uniform points; the best
    value wins and ties keep ``gamma_prev``.
    """
    P = _as_problem(dataset, folds)
    tlo, thi = math.log(lo), math.log(hi)

    def f(t):
        g = math.exp(t)
        v, d1, d2 = gamma_objective(P, None, supports, g, second=True)
        return v, g * d1, g * d1 + g * g * d2

    starts = [min(max(math.log(gamma_prev), tlo), thi)]
    starts += list(np.linspace(tlo, thi, n_starts))
    cands = list(starts)
    for s in starts:
        try:
            cands.append(_minimize_log_gamma(f, s, tlo, thi))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover
            log.debug("gamma start %.3g discarded: %s", math.exp(s), exc)
    vals = [gamma_objective(P, None, supports, math.exp(t))[0] for t in cands]
    best = vals[0]
    pick = 0
    for i, v in enumerate(vals):
        if v < best - 1e-12 * max(1.0, abs(best)):
            best, pick = v, i
    return float(min(max(math.exp(cands[pick]), lo), hi))


@dataclass(frozen=True)
class CdOptions:
    tau_range: tuple | list | None = None
    mode: str = "relaxation"
    epsilon: float = 1e-4
    mio_budget: int | None = None
    max_iter: int = 20
    mio: MioOptions = field(default_factory=MioOptions)
    metric: str = "certified"
    threads: int = 1


@dataclass
class CdState:
    gamma_t: float
    tau_t: int
    h_t: float
    history: list = field(default_factory=list)
    status: str = "improving"
    stats: SolveStats = field(default_factory=SolveStats)
    exact: bool = False
    last_search: TauSearchResult | None = field(default=None, repr=False)


def _same_point(g1, t1, g2, t2) -> bool:
    return t1 == t2 and abs(math.log(g1) - math.log(g2)) <= 1e-6


def coordinate_descent(dataset, folds, gamma_0: float, tau_0: int, opts: CdOptions | None = None,
                       on_iteration=None) -> CdState:
    """Alternate a tau-step (``tau_search``) and a gamma-step (``optimize_gamma``).

    A step is kept only if the CV estimate does not increase. Stops when a
    visited point repeats (``cycled``), nothing changes (``converged``) or the
    iteration cap is reached (``budget``).
    """
    opts = opts or CdOptions()
    P = _as_problem(dataset, folds)
    gamma = min(max(float(gamma_0), GAMMA_MIN), GAMMA_MAX)
    taus = _tau_range(opts.tau_range, P)
    tau = int(tau_0)
    if tau not in taus:
        raise ConfigurationError(f"tau_0={tau} is outside the search range {taus[0]}..{taus[-1]}")
    stats = SolveStats()

    def search(g):
        res = tau_search(P, None, g, taus, epsilon=opts.epsilon, mio_budget=opts.mio_budget, mode=opts.mode,
                         mio=opts.mio, metric=opts.metric, threads=opts.threads)
        stats.add(res.stats)
        return res

    res = search(gamma)
    h = res.h[tau]
    state = CdState(gamma_t=gamma, tau_t=tau, h_t=h, stats=stats, last_search=res)
    state.history.append({"iter": 0, "step": "init", "gamma": gamma, "tau": tau, "h": h})
    visited = [(gamma, tau)]
    for it in range(1, opts.max_iter + 1):
        # tau-step on the table we already hold for this gamma
        tau_new = res.tau_star
        h_new = res.h[tau_new]
        changed = False
        if tau_new != tau and h_new <= h:
            tau, h, changed = tau_new, h_new, True
            state.history.append({"iter": it, "step": "tau", "gamma": gamma, "tau": tau, "h": h})
        # gamma-step on the supports behind the current estimate
        g_new = optimize_gamma(P, None, res.supports(tau), gamma)
        moved = abs(math.log(g_new) - math.log(gamma)) > 1e-6
        if moved:
            res_new = search(g_new)
            h_g = res_new.h[tau]
            if h_g <= h:
                gamma, h, res, changed = g_new, h_g, res_new, True
                state.history.append({"iter": it, "step": "gamma", "gamma": gamma, "tau": tau, "h": h})
        state.gamma_t, state.tau_t, state.h_t, state.last_search = gamma, tau, h, res
        if on_iteration is not None:
            on_iteration(state.history[-1])
        if not changed:
            state.status = "converged"
            break
        if any(_same_point(g, t, gamma, tau) for g, t in visited):
            state.status = "cycled"
            break
        visited.append((gamma, tau))
    else:
        state.status = "budget"
    state.exact = opts.mode == "exact" and res.all_exact(tau)
    return state
