"""Dense kernels: regularized Gram matrices, fold downdates, Cholesky solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .errors import ConfigurationError, NumericError

__all__ = [
    "RegGram",
    "factor",
    "build_reg_gram",
    "downdate_fold",
    "solve_spd",
    "quad_form_inv",
    "GramMetric",
    "GramData",
    "ridge_on_support",
]


@dataclass(frozen=True)
class RegGram:
    """``A = X'X + (gamma/2) I`` together with its lower Cholesky factor."""

    A: np.ndarray
    gamma: float
    chol: np.ndarray

    @property
    def p(self) -> int:
        return self.A.shape[0]


def factor(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises NumericError with the failing (0-based) pivot."""
    A = np.asarray(A, dtype=float)
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise NumericError(f"matrix is not positive definite (pivot {info - 1})", pivot=info - 1)
    if info < 0:
        raise NumericError(f"invalid argument {-info} passed to dpotrf")
    return L


def _from_gram(G: np.ndarray, gamma: float) -> RegGram:
    if not gamma > 0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    A = np.array(G, dtype=float)
    A = 0.5 * (A + A.T)
    A[np.diag_indices_from(A)] += 0.5 * gamma
    L = factor(A)
    A.setflags(write=False)
    L.setflags(write=False)
    return RegGram(A=A, gamma=float(gamma), chol=L)


def build_reg_gram(X: np.ndarray, gamma: float) -> RegGram:
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ConfigurationError("X contains non-finite entries")
    return _from_gram(X.T @ X, gamma)


def downdate_fold(G: np.ndarray, X_fold: np.ndarray, gamma: float) -> RegGram:
    """Factor ``G - X_fold'X_fold + (gamma/2) I`` from scratch."""
    X_fold = np.asarray(X_fold, dtype=float).reshape(-1, np.shape(G)[0])
    return _from_gram(np.asarray(G, dtype=float) - X_fold.T @ X_fold, gamma)


def _check_dim(G: RegGram, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != G.p:
        raise ConfigurationError(f"dimension mismatch: matrix is {G.p}x{G.p}, vector has {v.shape[0]} rows")
    return v


def solve_spd(G: RegGram, b: np.ndarray) -> np.ndarray:
    b = _check_dim(G, b)
    t = solve_triangular(G.chol, b, lower=True, check_finite=False)
    return solve_triangular(G.chol, t, lower=True, trans="T", check_finite=False)


def quad_form_inv(G: RegGram, x: np.ndarray) -> float:
    """``x' A^{-1} x`` as the squared norm of ``L^{-1} x``."""
    x = _check_dim(G, x)
    t = solve_triangular(G.chol, x, lower=True, check_finite=False)
    return float(np.dot(t, t)) if t.ndim == 1 else np.einsum("i...,i...->...", t, t)


class GramMetric:
    """Pseudo-inverse quadratic form of a PSD Gram matrix ``X'X`` (no ridge shift).

    ``quad_form_inv`` returns ``inf`` for vectors with a component in the
    numerical null space, since no finite bound exists in that direction.
    """

    def __init__(self, G: np.ndarray, rtol: float = 1e-10):
        G = np.asarray(G, dtype=float)
        w, V = np.linalg.eigh(0.5 * (G + G.T))
        cut = rtol * max(float(w[-1]) if w.size else 0.0, 1.0)
        keep = w > cut
        self.p = G.shape[0]
        self.rank = int(keep.sum())
        self._V = V[:, keep]
        self._w = w[keep]
        self._null = V[:, ~keep]

    @property
    def full_rank(self) -> bool:
        return self.rank == self.p

    def quad_form_inv(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if self._null.shape[1]:
            leak = self._null.T @ x
            if np.linalg.norm(leak) > 1e-9 * max(1.0, float(np.linalg.norm(x))):
                return float("inf")
        t = self._V.T @ x
        return float(np.sum(t * t / self._w))

    def whiten(self) -> np.ndarray:
        """``W`` with ``W W' = G^+`` restricted to the range (p x rank)."""
        return self._V / np.sqrt(self._w)


@dataclass(frozen=True)
class GramData:
    """Sufficient statistics ``(X'X, X'y, y'y)`` of a least-squares slice."""

    G: np.ndarray
    c: np.ndarray
    yy: float
    n: int

    @classmethod
    def from_xy(cls, X, y) -> "GramData":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        return cls(G=X.T @ X, c=X.T @ y, yy=float(y @ y), n=X.shape[0])

    @property
    def p(self) -> int:
        return self.c.shape[0]

    def without(self, X_rows, y_rows) -> "GramData":
        X_rows = np.asarray(X_rows, dtype=float).reshape(-1, self.p)
        y_rows = np.asarray(y_rows, dtype=float).ravel()
        return GramData(
            G=self.G - X_rows.T @ X_rows,
            c=self.c - X_rows.T @ y_rows,
            yy=float(self.yy - y_rows @ y_rows),
            n=self.n - X_rows.shape[0],
        )

    def lipschitz(self) -> float:
        """Lipschitz constant of the gradient of ||y - X b||^2."""
        top = float(np.linalg.eigvalsh(self.G)[-1]) if self.p else 0.0
        return max(2.0 * top, 1e-12)

    def objective(self, beta, gamma: float) -> float:
        """``||y - X beta||^2 + (gamma/2) ||beta||^2``."""
        beta = np.asarray(beta, dtype=float)
        return float(beta @ self.G @ beta - 2.0 * self.c @ beta + self.yy + 0.5 * gamma * beta @ beta)


def ridge_on_support(data: GramData, gamma: float, support) -> tuple[np.ndarray, float]:
    """Ridge fit restricted to ``support``; returns full-length beta and its objective."""
    idx = np.asarray(support, dtype=int)
    beta = np.zeros(data.p)
    if idx.size == 0:
        return beta, data.yy
    A = data.G[np.ix_(idx, idx)].copy()
    A[np.diag_indices_from(A)] += 0.5 * gamma
    L = factor(A)
    b = data.c[idx]
    t = solve_triangular(L, b, lower=True, check_finite=False)
    beta[idx] = solve_triangular(L, t, lower=True, trans="T", check_finite=False)
    # at the restricted optimum the objective collapses to yy - c_S' beta_S
    return beta, float(data.yy - b @ beta[idx])
