"""Perspective relaxation of the cardinality-constrained ridge problem.

The relaxation minimizes ``||y - X b||^2 + (gamma/2) * Omega_tau(b)`` where
``Omega_tau(b) = min { sum b_i^2 / z_i : z in [0,1]^p, sum z <= tau }``. It is
solved by accelerated proximal gradient with an exact proximal step, and every
result carries a Fenchel-dual lower bound so callers never rely on the primal
value being optimal.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError
from .linalg import GramData, ridge_on_support

__all__ = [
    "RelaxOptions",
    "RelaxSolution",
    "AccuracyWarning",
    "persp_penalty",
    "solve_perspective",
    "solve_perspective_gram",
    "greedy_round",
    "local_search",
]

log = logging.getLogger(__name__)


class AccuracyWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class RelaxOptions:
    # relative duality gap; tighter targets rarely change a support
    tol: float = 1e-6
    max_iter: int | None = None  # default 50 p + 10_000
    check_every: int = 5

    def iteration_cap(self, p: int) -> int:
        return self.max_iter if self.max_iter is not None else 50 * p + 10_000


@dataclass(frozen=True)
class RelaxSolution:
    beta: np.ndarray
    z: np.ndarray
    primal_value: float
    dual_value: float
    tau: int
    gamma: float
    # X'alpha at the dual certificate, alpha = 2(y - X b); drives the screening rules.
    scores: np.ndarray = field(repr=False)
    iterations: int = 0
    warning: str | None = None

    @property
    def gap(self) -> float:
        return max(0.0, self.primal_value - self.dual_value)

    @property
    def relative_gap(self) -> float:
        return self.gap / max(1.0, abs(self.primal_value))


def persp_penalty(beta, tau: int) -> tuple[float, np.ndarray]:
    """Water-filled perspective penalty ``Omega_tau(beta)`` and its minimizing ``z``.

    >>> persp_penalty(np.array([3.0, 1.0]), 1)
    (16.0, array([0.75, 0.25]))
    """
    beta = np.ascontiguousarray(beta, dtype=float)
    if tau < 0:
        raise ConfigurationError("tau must be nonnegative")
    val, z = K.water_fill(beta, int(tau))
    return float(val), z


def _check(gamma: float, tau: int, p: int) -> None:
    if not gamma > 0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    if not 1 <= tau <= p:
        raise ConfigurationError(f"tau must lie in [1, {p}], got {tau}")


def solve_perspective_gram(
    data: GramData,
    gamma: float,
    tau: int,
    opts: RelaxOptions | None = None,
    beta0: np.ndarray | None = None,
    lipschitz: float | None = None,
) -> RelaxSolution:
    opts = opts or RelaxOptions()
    p = data.p
    _check(gamma, tau, p)
    one = np.zeros(p, dtype=bool)
    x0 = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    L = data.lipschitz() if lipschitz is None else lipschitz
    cap = opts.iteration_cap(p)
    beta, beta_d, pv, dv, iters, status = K.solve_relaxation(
        data.G, data.c, data.yy, float(gamma), int(tau), one, x0, L, opts.tol, cap, np.inf, opts.check_every
    )
    _, z = K.water_fill(beta, int(tau))
    _, w = K.dual_value(data.G, data.c, data.yy, float(gamma), int(tau), one, beta_d)
    rel = RelaxSolution(
        beta=beta, z=z, primal_value=float(pv), dual_value=float(dv), tau=int(tau), gamma=float(gamma),
        scores=w, iterations=int(iters),
    )
    if status == 2 and rel.relative_gap > 100 * opts.tol:
        msg = f"perspective relaxation stopped at the iteration cap with relative gap {rel.relative_gap:.2e}"
        warnings.warn(msg, AccuracyWarning, stacklevel=2)
        rel = RelaxSolution(**{**rel.__dict__, "warning": msg})
    return rel


def solve_perspective(X, y, gamma: float, tau: int, tol: float = 1e-6, **kw) -> RelaxSolution:
    """Solve the relaxation on a data slice ``(X, y)``."""
    return solve_perspective_gram(GramData.from_xy(X, y), gamma, tau, RelaxOptions(tol=tol), **kw)


def rounding_order(z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Indices sorted by larger z, then larger |beta|, then lower index."""
    return np.lexsort((np.arange(z.size), -np.abs(beta), -z))


def greedy_round(rel: RelaxSolution, data: GramData, gamma: float, tau: int):
    """Keep the ``tau`` coordinates with the largest relaxed ``z`` and refit ridge on them.

    Returns ``(beta, z, value)`` with ``value`` an upper bound on the MIO optimum.
    """
    support = np.sort(rounding_order(rel.z, rel.beta)[: min(tau, data.p)])
    beta, value = ridge_on_support(data, gamma, support)
    z = np.zeros(data.p)
    z[support] = 1.0
    return beta, z, value


def local_search(data: GramData, gamma: float, support, value: float | None = None, max_rounds: int = 50):
    """First-improvement single-swap search over supports of fixed size."""
    support = list(np.sort(np.asarray(support, dtype=int)))
    if value is None:
        _, value = ridge_on_support(data, gamma, support)
    outside = [j for j in range(data.p) if j not in support]
    for _ in range(max_rounds):
        improved = False
        for a in range(len(support)):
            for b in range(len(outside)):
                trial = support.copy()
                trial[a] = outside[b]
                _, v = ridge_on_support(data, gamma, trial)
                if v < value - 1e-12 * max(1.0, abs(value)):
                    support[a], outside[b] = outside[b], support[a]
                    value = v
                    improved = True
                    break
            if improved:
                break
        if not improved:
            break
    support = np.sort(np.asarray(support, dtype=int))
    beta, value = ridge_on_support(data, gamma, support)
    return support, beta, value
