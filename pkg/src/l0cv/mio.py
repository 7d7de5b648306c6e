"""Certified branch-and-bound for cardinality-constrained ridge regression.

Nodes fix support indicators to 0 (column dropped) or 1 (plain ridge penalty,
outside the budget). Each node is bounded by its perspective relaxation, and
pruning only ever uses the relaxation's dual certificate.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError, InconsistencyError
from .linalg import GramData, ridge_on_support
from .relax import (
    RelaxOptions,
    RelaxSolution,
    greedy_round,
    local_search,
    rounding_order,
    solve_perspective_gram,
)

__all__ = ["MioOptions", "MioSolution", "solve_ridge_on_support", "screen", "solve_mio", "solve_mio_gram"]

OPTIMAL = "optimal"
GAP_LIMIT = "gap-limit"
TIME_LIMIT = "time-limit"


@dataclass(frozen=True)
class MioOptions:
    gap_tol: float = 1e-6
    time_limit: float | None = None
    node_limit: int | None = None
    warm_start: tuple[int, ...] | None = None
    screening: bool = True
    local_search: bool = True
    relax_tol: float = 1e-6
    record_history: bool = False


@dataclass(frozen=True)
class MioSolution:
    beta: np.ndarray
    z: np.ndarray
    upper: float
    lower: float
    nodes: int
    status: str
    fixed_zero: tuple[int, ...] = ()
    fixed_one: tuple[int, ...] = ()
    history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def gap(self) -> float:
        return max(0.0, self.upper - self.lower) / max(1.0, abs(self.upper))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.z > 0.5)


def solve_ridge_on_support(X, y, gamma: float, z) -> tuple[np.ndarray, float]:
    """Ridge fit using only the columns where ``z`` is nonzero."""
    z = np.asarray(z)
    return ridge_on_support(GramData.from_xy(X, y), gamma, np.flatnonzero(z > 0.5))


def screen(rel: RelaxSolution, f_bar: float, gamma: float, tau: int):
    """Safe screening from a relaxation certificate.

    The rules compare the dual scores ``s_i = (X'alpha)_i`` of the relaxation
    certificate: forcing ``i`` into (out of) the support costs at least
    ``(s_[tau]^2 - s_i^2) / (2 gamma)`` (``(s_i^2 - s_[tau+1]^2) / (2 gamma)``)
    above the certified lower bound ``rel.dual_value``.
    """
    s2 = np.asarray(rel.scores, dtype=float) ** 2
    p = s2.size
    if tau >= p:
        return (), ()
    ordered = np.sort(s2)[::-1]
    s_tau, s_next = ordered[tau - 1], ordered[tau]
    lo = rel.dual_value
    if f_bar < lo - 1e-9 * max(1.0, abs(lo)):
        raise InconsistencyError(f"upper bound {f_bar} is below the certified lower bound {lo}")
    zero = np.flatnonzero((s2 <= s_next) & (lo - (s2 - s_tau) / (2.0 * gamma) > f_bar))
    one = np.flatnonzero((s2 >= s_tau) & (lo + (s2 - s_next) / (2.0 * gamma) > f_bar))
    if one.size > tau or np.intersect1d(zero, one).size:
        raise InconsistencyError(
            f"screening fixed {one.size} variables to one with tau={tau}; the upper bound {f_bar} is invalid"
        )
    return tuple(int(i) for i in zero), tuple(int(i) for i in one)


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    zero: frozenset = field(compare=False)
    one: frozenset = field(compare=False)
    beta: np.ndarray = field(compare=False, repr=False)


class _Search:
    def __init__(self, data: GramData, gamma: float, tau: int, opts: MioOptions):
        self.data, self.gamma, self.tau, self.opts = data, gamma, tau, opts
        self.p = data.p
        self.best_value = np.inf
        self.best_support = np.zeros(0, dtype=int)
        self.nodes = 0
        self.history = []

    def offer(self, support, value=None, polish=False):
        support = np.sort(np.asarray(support, dtype=int))
        if value is None:
            _, value = ridge_on_support(self.data, self.gamma, support)
        if polish and self.opts.local_search and value < self.best_value:
            support, _, value = local_search(self.data, self.gamma, support, value)
        if value < self.best_value:
            self.best_value, self.best_support = float(value), support

    def fill(self, support):
        """Pad a support to the full budget with the lowest-index unused columns (never hurts)."""
        support = list(support)
        for j in range(self.p):
            if len(support) >= self.tau:
                break
            if j not in support:
                support.append(j)
        return support

    def abs_tol(self) -> float:
        return self.opts.gap_tol * max(1.0, abs(self.best_value))

    def relax_node(self, zero, one, beta0, cutoff):
        """Returns (status, dual, beta_full, z_full) for the node's relaxation."""
        act = np.array([j for j in range(self.p) if j not in zero], dtype=int)
        d = self.data
        G = np.ascontiguousarray(d.G[np.ix_(act, act)])
        c = np.ascontiguousarray(d.c[act])
        pinned = np.array([j in one for j in act], dtype=bool)
        budget = self.tau - len(one)
        lip = max(2.0 * float(np.linalg.eigvalsh(G)[-1]), 1e-12)
        x0 = np.ascontiguousarray(beta0[act])
        cap = RelaxOptions().iteration_cap(act.size)
        beta, _, _, dv, _, status = K.solve_relaxation(
            G, c, d.yy, self.gamma, budget, pinned, x0, lip, self.opts.relax_tol, cap, cutoff, 5
        )
        _, z = K.penalty(beta, pinned, budget)
        beta_full = np.zeros(self.p)
        beta_full[act] = beta
        z_full = np.zeros(self.p)
        z_full[act] = z
        return status, float(dv), beta_full, z_full


def solve_mio_gram(data: GramData, gamma: float, tau: int, opts: MioOptions | None = None, root: RelaxSolution | None = None) -> MioSolution:
    opts = opts or MioOptions()
    p = data.p
    if not gamma > 0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    if not 1 <= tau <= p:
        raise ConfigurationError(f"tau must lie in [1, {p}], got {tau}")
    t0 = time.perf_counter()
    if tau == p:
        beta, value = ridge_on_support(data, gamma, np.arange(p))
        return MioSolution(beta=beta, z=np.ones(p), upper=value, lower=value, nodes=1, status=OPTIMAL,
                           history=[(value, value)] if opts.record_history else [])

    S = _Search(data, gamma, tau, opts)
    if root is None:
        root = solve_perspective_gram(data, gamma, tau, RelaxOptions(tol=opts.relax_tol))
    S.nodes = 1
    _, zr, gval = greedy_round(root, data, gamma, tau)
    S.offer(np.flatnonzero(zr), gval, polish=True)
    if opts.warm_start is not None:
        S.offer(S.fill(sorted(set(int(i) for i in opts.warm_start))[:tau]))

    zero, one = (), ()
    if opts.screening:
        zero, one = screen(root, S.best_value, gamma, tau)

    lower_open = root.dual_value
    counter = itertools.count()
    heap = []
    closed_lb = np.inf

    def record(lower):
        if opts.record_history:
            S.history.append((lower, S.best_value))

    def leaf(zero_set, one_set):
        free = [j for j in range(p) if j not in zero_set and j not in one_set]
        if len(one_set) >= tau or len(one_set) + len(free) <= tau or not free:
            support = sorted(one_set) if len(one_set) >= tau else sorted(one_set) + free
            return support
        return None

    if not zero and not one:
        heap.append(_Node(root.dual_value, next(counter), frozenset(), frozenset(), root.beta))
        first_solved = (root.beta, root.z, root.dual_value)
    else:
        heap.append(_Node(root.dual_value, next(counter), frozenset(zero), frozenset(one), root.beta))
        first_solved = None

    status = OPTIMAL
    record(min(lower_open, S.best_value))
    while heap:
        lower = min(heap[0].bound, closed_lb)
        if S.best_value - lower <= S.abs_tol():
            break
        if opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit:
            status = TIME_LIMIT
            break
        if opts.node_limit is not None and S.nodes >= opts.node_limit:
            status = GAP_LIMIT
            break
        node = heapq.heappop(heap)
        if node.bound >= S.best_value - S.abs_tol():
            closed_lb = min(closed_lb, node.bound)
            continue
        lf = leaf(node.zero, node.one)
        if lf is not None:
            S.nodes += 1
            beta, val = ridge_on_support(data, gamma, lf)
            S.offer(lf, val)
            closed_lb = min(closed_lb, max(val, node.bound))
            record(min([closed_lb] + [h.bound for h in heap[:1]]))
            continue
        if first_solved is not None and not node.zero and not node.one:
            beta, z, dv = first_solved
            first_solved = None
            st = 0
        else:
            S.nodes += 1
            st, dv, beta, z = S.relax_node(node.zero, node.one, node.beta, S.best_value - S.abs_tol())
        bound = max(node.bound, dv)
        if st != 1:
            free_budget = tau - len(node.one)
            free = np.array([j for j in range(p) if j not in node.zero and j not in node.one], dtype=int)
            order = free[rounding_order(z[free], beta[free])]
            cand = sorted(node.one) + list(order[:free_budget])
            S.offer(cand, polish=True)
        if st == 1 or bound >= S.best_value - S.abs_tol():
            closed_lb = min(closed_lb, bound)
            record(min([closed_lb] + [h.bound for h in heap[:1]]))
            continue
        free = [j for j in range(p) if j not in node.zero and j not in node.one]
        zf = z[free]
        frac = np.abs(zf - 0.5)
        # most fractional, then larger |beta|, then lower index
        pick = free[int(np.lexsort((np.asarray(free), -np.abs(beta[free]), frac))[0])]
        for zs, os_ in ((node.zero | {pick}, node.one), (node.zero, node.one | {pick})):
            child_beta = beta.copy()
            if pick in zs:
                child_beta[pick] = 0.0
            heapq.heappush(heap, _Node(bound, next(counter), zs, os_, child_beta))
        record(min([closed_lb] + [h.bound for h in heap[:1]]))

    lower = min([closed_lb] + [h.bound for h in heap])
    lower = min(lower, S.best_value)
    upper = S.best_value
    beta, upper = ridge_on_support(data, gamma, S.best_support)
    z = np.zeros(p)
    z[S.best_support] = 1.0
    if status == OPTIMAL and (upper - lower) / max(1.0, abs(upper)) > opts.gap_tol:
        status = GAP_LIMIT
    return MioSolution(beta=beta, z=z, upper=float(upper), lower=float(lower), nodes=S.nodes, status=status,
                       fixed_zero=tuple(zero), fixed_one=tuple(one), history=S.history)


def solve_mio(X, y, gamma: float, tau: int, opts: MioOptions | None = None) -> MioSolution:
    return solve_mio_gram(GramData.from_xy(X, y), gamma, tau, opts)
