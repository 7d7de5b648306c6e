"""Dataset ingestion, standardization, fold partitioning and synthetic instances."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError

__all__ = [
    "Dataset",
    "FoldPartition",
    "SyntheticSpec",
    "standardize",
    "load_csv",
    "make_folds",
    "generate_synthetic",
    "write_csv",
]


@dataclass(frozen=True)
class Dataset:
    """Standardized regression data.

    ``X`` has zero-mean, unit sample-variance columns (constant columns are
    zeroed and listed in ``constant_columns``); ``y`` is centered. The
    ``x_mean``/``x_scale``/``y_mean`` arrays let callers map coefficients back
    to the raw units.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] | None = None
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_mean: float = 0.0
    constant_columns: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise ConfigurationError("X must be a 2-D array")
        n, p = X.shape
        if n < 2 or p < 1:
            raise ConfigurationError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if y.shape[0] != n:
            raise ConfigurationError(f"y has {y.shape[0]} entries but X has {n} rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ConfigurationError("data contains non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def unscale_coefficients(self, beta: np.ndarray) -> tuple[np.ndarray, float]:
        """Coefficients and intercept in the original (unstandardized) units."""
        beta = np.asarray(beta, dtype=float)
        if self.x_scale is None:
            return beta.copy(), self.y_mean
        coef = np.where(self.x_scale > 0, beta / np.where(self.x_scale > 0, self.x_scale, 1.0), 0.0)
        mean = self.x_mean if self.x_mean is not None else np.zeros_like(coef)
        return coef, float(self.y_mean - coef @ mean)


@dataclass(frozen=True)
class FoldPartition:
    folds: tuple[np.ndarray, ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def n(self) -> int:
        return int(sum(f.size for f in self.folds))

    def train_mask(self, j: int) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.folds[j]] = False
        return mask


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    p: int
    tau_true: int
    rho: float = 0.0
    nu: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise ConfigurationError("synthetic spec needs n >= 2 and p >= 1")
        if not 1 <= self.tau_true <= self.p:
            raise ConfigurationError(f"tau_true must lie in [1, {self.p}]")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigurationError("rho must lie in [0, 1)")
        if not self.nu > 0:
            raise ConfigurationError("nu must be positive")


def standardize(X, y, feature_names=None, meta=None) -> Dataset:
    """Center/scale columns of ``X`` (ddof=1) and center ``y``."""
    X = np.array(X, dtype=float)
    y = np.array(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] < 2:
        raise ConfigurationError("need at least 2 observations")
    mean = X.mean(axis=0)
    Xc = X - mean
    # Two passes: the centered data gives a more accurate spread than raw moments.
    Xc -= Xc.mean(axis=0)
    scale = Xc.std(axis=0, ddof=1)
    tiny = 1e-12 * np.maximum(1.0, np.abs(mean))
    constant = scale <= tiny
    scale = np.where(constant, 0.0, scale)
    Xs = np.divide(Xc, scale, out=np.zeros_like(Xc), where=~constant)
    y_mean = float(y.mean())
    yc = y - y_mean
    yc -= yc.mean()
    names = tuple(feature_names) if feature_names is not None else None
    return Dataset(
        X=Xs,
        y=yc,
        feature_names=names,
        x_mean=mean,
        x_scale=scale,
        y_mean=y_mean,
        constant_columns=tuple(int(i) for i in np.flatnonzero(constant)),
        meta=dict(meta or {}),
    )


def _resolve_response(header: list[str], response) -> int:
    if response is None:
        return len(header) - 1
    if isinstance(response, int) or (isinstance(response, str) and response.lstrip("-").isdigit()):
        idx = int(response)
        if idx < 0:
            idx += len(header)
        if not 0 <= idx < len(header):
            raise ConfigurationError(f"response column index {response} out of range")
        return idx
    if response not in header:
        raise ConfigurationError(f"response column {response!r} not found in header")
    return header.index(response)


def load_csv(path, response_column=None) -> Dataset:
    """Read a headered numeric CSV and return a standardized dataset.

    ``response_column`` is a header name or a column index (negative indices
    count from the end); the last column is used when omitted.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path} is empty") from None
        rcol = _resolve_response(header, response_column)
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} cells, found {len(record)}", row=lineno
                )
            values = []
            for col, cell in zip(header, record):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: non-numeric cell {cell!r} in column {col!r}",
                        row=lineno,
                        column=col,
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(
                        f"{path}:{lineno}: missing or non-finite value in column {col!r}",
                        row=lineno,
                        column=col,
                    )
                values.append(v)
            rows.append(values)
    if len(rows) < 2:
        raise ParseError(f"{path}: need at least 2 data rows, found {len(rows)}")
    data = np.asarray(rows, dtype=float)
    feats = [i for i in range(len(header)) if i != rcol]
    if not feats:
        raise ConfigurationError("CSV has no feature columns besides the response")
    return standardize(
        data[:, feats],
        data[:, rcol],
        feature_names=[header[i] for i in feats],
        meta={"source": str(path), "response": header[rcol]},
    )


def make_folds(n: int, k: int, seed: int = 0) -> FoldPartition:
    """Shuffle ``range(n)`` with ``seed`` and cut it into ``k`` balanced contiguous chunks."""
    n, k = int(n), int(k)
    if k < 2 or k > n:
        raise ConfigurationError(f"number of folds must satisfy 2 <= k <= n (k={k}, n={n})")
    perm = np.random.default_rng(seed).permutation(n)
    folds = tuple(np.sort(chunk) for chunk in np.array_split(perm, k))
    for f in folds:
        f.setflags(write=False)
    return FoldPartition(folds=folds, seed=int(seed))


def signal_indices(p: int, tau_true: int) -> np.ndarray:
    """Equispaced positions of the planted nonzeros."""
    return np.unique(np.round(np.linspace(0, p - 1, tau_true)).astype(int))


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """AR(1)-correlated Gaussian design with a unit signal on equispaced features.

    The noise draw is rescaled so that the sample variance ratio
    ``var(X beta_true) / var(noise)`` equals ``spec.nu`` exactly.
    """
    rng = np.random.default_rng(spec.seed)
    idx = np.arange(spec.p)
    cov = spec.rho ** np.abs(idx[:, None] - idx[None, :])
    chol = np.linalg.cholesky(cov)
    X = rng.standard_normal((spec.n, spec.p)) @ chol.T
    beta = np.zeros(spec.p)
    beta[signal_indices(spec.p, spec.tau_true)] = 1.0
    signal = X @ beta
    eps = rng.standard_normal(spec.n)
    eps -= eps.mean()
    sig_var = signal.var(ddof=1)
    eps *= math.sqrt(sig_var / spec.nu) / eps.std(ddof=1)
    y = signal + eps
    names = [f"x{i}" for i in range(spec.p)]
    return standardize(
        X,
        y,
        feature_names=names,
        meta={"synthetic": asdict(spec), "beta_true": beta.tolist(), "X_raw": X, "y_raw": y},
    )


def write_csv(dataset: Dataset, path, sidecar: bool = True) -> Path:
    """Write raw synthetic data (or the standardized arrays) to CSV plus a JSON sidecar."""
    path = Path(path)
    X = dataset.meta.get("X_raw", dataset.X)
    y = dataset.meta.get("y_raw", dataset.y)
    names = list(dataset.feature_names or [f"x{i}" for i in range(dataset.p)])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["y"])
        for row, target in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])
    if sidecar:
        meta = {k: v for k, v in dataset.meta.items() if k not in ("X_raw", "y_raw")}
        meta["response"] = "y"
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path
