"""Cross-validated hyperparameter selection for sparse ridge regression.

Train ``min ||y - X b||^2 + (gamma/2) ||b||^2  s.t.  ||b||_0 <= tau`` exactly by
branch-and-bound, and pick ``(gamma, tau)`` by k-fold error while using
perspective-relaxation bounds to skip most of the mixed-integer solves.
"""

__version__ = "0.1.0"

from .bounds import BoundCell, PredictionInterval, compute_bounds, prediction_interval
from .cvopt import (
    CdOptions,
    CdState,
    SolveStats,
    TauSearchResult,
    coordinate_descent,
    gamma_objective,
    grid_search_tau,
    optimize_gamma,
    tau_max_default,
    tau_search,
)
from .data import Dataset, FoldPartition, SyntheticSpec, generate_synthetic, load_csv, make_folds
from .errors import BudgetExhausted, ConfigurationError, InconsistencyError, NumericError, ParseError
from .mio import MioOptions, MioSolution, solve_mio
from .relax import RelaxSolution, solve_perspective

__all__ = [
    "BoundCell", "PredictionInterval", "compute_bounds", "prediction_interval",
    "CdOptions", "CdState", "SolveStats", "TauSearchResult", "coordinate_descent", "gamma_objective",
    "grid_search_tau", "optimize_gamma", "tau_max_default", "tau_search",
    "Dataset", "FoldPartition", "SyntheticSpec", "generate_synthetic", "load_csv", "make_folds",
    "BudgetExhausted", "ConfigurationError", "InconsistencyError", "NumericError", "ParseError",
    "MioOptions", "MioSolution", "solve_mio", "RelaxSolution", "solve_perspective",
]
