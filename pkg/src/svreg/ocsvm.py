"""One-class nu-SVM with a Gaussian RBF kernel.

Weights are scaled so that they sum to one; the box constraint is
``0 <= alpha_i <= 1 / (nu * l)``.  The output function is

    f(x) = sum_i alpha_i exp(-gamma |x_i - x|^2) - rho
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ._smo import smo_solve
from .pointset import PointsLike, as_pointset

SV_THRESHOLD = 1e-8
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10_000_000
DENSE_LIMIT = 4096
CACHE_ROWS = 1024


class SolverError(RuntimeError):
    """SMO hit its update budget before the KKT violation fell below tolerance."""

    def __init__(self, message, violation):
        super().__init__(message)
        self.violation = violation


class InfeasibleNuError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    gamma: float
    nu: float = float("nan")
    # diagnostics from training; not needed for evaluation
    n_train: int = 0
    objective: float = float("nan")
    violation: float = float("nan")
    iterations: int = 0
    sv_indices: np.ndarray = None

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def n_sv(self) -> int:
        return self.support_vectors.shape[0]

    def decision_function(self, x) -> np.ndarray:
        return decision_value(self, x)


def kernel(x1, x2, gamma: float):
    """Gaussian RBF kernel ``exp(-gamma |x1 - x2|^2)``; broadcasts over leading axes."""
    d = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
    return np.exp(-gamma * np.sum(d * d, axis=-1))


def kernel_matrix(A, B, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean"))


def dual_objective(alpha, X, gamma) -> float:
    """``1/2 a^T K a`` evaluated densely; used for checks, not by the solver."""
    K = kernel_matrix(X, X, gamma)
    return 0.5 * float(alpha @ K @ alpha)


def _initial_alpha(n, C):
    # first floor(1/C) weights at the bound, the remainder on the next one
    alpha = np.zeros(n)
    full = min(n, int(math.floor(1.0 / C + 1e-12)))
    alpha[:full] = C
    if full < n:
        alpha[full] = 1.0 - full * C
    return alpha


def _compute_rho(alpha, G, C):
    free = (alpha > SV_THRESHOLD) & (alpha < C - SV_THRESHOLD)
    if np.any(free):
        return float(np.mean(G[free]))
    at_upper = alpha >= C - SV_THRESHOLD
    at_lower = alpha <= SV_THRESHOLD
    lb = G[at_upper].max() if np.any(at_upper) else -np.inf
    ub = G[at_lower].min() if np.any(at_lower) else np.inf
    if not np.isfinite(lb):
        lb = ub
    if not np.isfinite(ub):
        ub = lb
    return float(0.5 * (lb + ub))


def train(ps: PointsLike, nu: float, gamma: float, *, tol: float = DEFAULT_TOL,
          max_iter: int = DEFAULT_MAX_ITER, dense_limit: int = DENSE_LIMIT,
          cache_rows: int = CACHE_ROWS) -> SvmModel:
    """Train a one-class SVM on the points of ``ps``.

    Raises :class:`InfeasibleNuError` when ``nu`` is outside ``[1/l, 1]`` and
    :class:`SolverError` if SMO does not converge within ``max_iter`` updates.
    """
    X = np.ascontiguousarray(as_pointset(ps).points, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError("one-class SVM training needs at least two points")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not 0 < nu <= 1:
        raise InfeasibleNuError(f"nu must lie in (0, 1], got {nu}")
    if nu * n < 1 - 1e-12:
        raise InfeasibleNuError(
            f"nu={nu} is below 1/l={1.0 / n:.3g}; refusing to clamp")
    C = 1.0 / (nu * n)

    alpha = _initial_alpha(n, C)
    if n <= dense_limit:
        K = kernel_matrix(X, X, gamma)
    else:
        K = np.empty((0, 0))
    G, iters, violation = smo_solve(alpha, C, tol, max_iter, K, X, float(gamma),
                                    max(1, min(cache_rows, n)))
    if violation >= tol:
        raise SolverError(
            f"SMO did not converge after {iters} updates (KKT violation {violation:.3g})",
            violation)

    rho = _compute_rho(alpha, G, C)
    sv = np.flatnonzero(alpha > SV_THRESHOLD)
    return SvmModel(
        support_vectors=X[sv].copy(),
        alphas=alpha[sv].copy(),
        rho=rho,
        gamma=float(gamma),
        nu=float(nu),
        n_train=n,
        objective=0.5 * float(alpha @ G),
        violation=float(violation),
        iterations=int(iters),
        sv_indices=sv,
    )


def decision_value(model: SvmModel, x) -> np.ndarray:
    """``sum_i alpha_i K(x_i, x) - rho`` for one point or an (n, D) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.dim:
        raise ValueError(f"model is {model.dim}D, query is {x.shape[1]}D")
    f = kernel_matrix(x, model.support_vectors, model.gamma) @ model.alphas - model.rho
    return f[0] if single else f
