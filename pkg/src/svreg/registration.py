"""Rigid registration by minimising the L2 distance between isotropic mixtures.

Only the cross term of the L2 distance depends on a rigid motion, so the
objective is

    f(theta) = -sum_ij phi_i phi_j N(0 | T(mu_i; theta) - nu_j, 2 sigma^2)

evaluated directly in O(mn).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.spatial.distance import cdist

from .ocsvm import train
from .optimize import NumericalFailure, OptimiseResult, minimise
from .pointset import (
    DimensionError,
    PointsLike,
    RigidTransform,
    angle_matrix_partial,
    angle_to_matrix,
    as_pointset,
    estimate_scale,
    quat_matrix_partials,
    quat_to_matrix,
)
from .svgm import Svgm, svm_to_gmm

ThetaLike = Union[RigidTransform, np.ndarray]


class RegistrationError(RuntimeError):
    """A failure inside one annealing round."""

    def __init__(self, round_index, cause):
        super().__init__(f"round {round_index}: {cause}")
        self.round_index = round_index
        self.cause = cause


def _check_pair(gx: Svgm, gy: Svgm):
    if gx.dim != gy.dim:
        raise DimensionError(f"mixtures have dimensions {gx.dim} and {gy.dim}")
    if not math.isclose(gx.variance, gy.variance, rel_tol=1e-12):
        raise ValueError(
            f"mixture variances differ ({gx.variance!r} vs {gy.variance!r})")


def _rotation_and_params(theta: ThetaLike, dim: int):
    # raw arrays use the quadratic quaternion form without normalising
    if isinstance(theta, RigidTransform):
        if theta.dim != dim:
            raise DimensionError(f"transform is {theta.dim}D, mixtures are {dim}D")
        params = theta.params
    else:
        params = np.asarray(theta, dtype=float)
        if params.size != (3 if dim == 2 else 7):
            raise DimensionError(f"expected {3 if dim == 2 else 7} parameters")
    if dim == 2:
        return angle_to_matrix(params[0]), params[1:3], params
    return quat_to_matrix(params[:4]), params[4:7], params


def _summands(gx: Svgm, gy: Svgm, R, t):
    M = gx.means @ R.T + t
    var2 = 2.0 * gx.variance
    c = (2.0 * math.pi * var2) ** (-0.5 * gx.dim)
    E = np.exp(-0.5 / var2 * cdist(M, gy.means, "sqeuclidean"))
    F = -c * (gx.weights[:, None] * E * gy.weights[None, :])
    return M, F


def l2_objective(gx: Svgm, gy: Svgm, theta: ThetaLike) -> float:
    """Rigid L2 objective for moving mixture ``gx`` against fixed ``gy``."""
    _check_pair(gx, gy)
    R, t, _ = _rotation_and_params(theta, gx.dim)
    _, F = _summands(gx, gy, R, t)
    return float(F.sum())


def objective_gradient(gx: Svgm, gy: Svgm, theta: ThetaLike):
    """Objective and its gradient w.r.t. the flat motion parameters.

    Parameters are (angle, tx, ty) in 2D and (w, x, y, z, tx, ty, tz) in 3D; the
    quaternion derivatives are those of the quadratic rotation-matrix form.
    """
    _check_pair(gx, gy)
    R, t, params = _rotation_and_params(theta, gx.dim)
    M, F = _summands(gx, gy, R, t)
    # dF/dM, one row per moving component
    G = -(0.5 / gx.variance) * (F.sum(axis=1)[:, None] * M - F @ gy.means)
    grad_t = G.sum(axis=0)
    A = G.T @ gx.means
    if gx.dim == 2:
        grad_r = np.array([np.sum(A * angle_matrix_partial(params[0]))])
    else:
        grad_r = np.einsum("kl,rkl->r", A, quat_matrix_partials(params[:4]))
    return float(F.sum()), np.concatenate([grad_r, grad_t])


def reduced_objective_gradient(gx: Svgm, gy: Svgm, params):
    """Objective as a function of the raw parameters with the quaternion normalised.

    The quaternion gradient is projected onto the tangent of the unit sphere
    (scaled by ``1/|q|``), so the function is invariant to quaternion scale.
    """
    params = np.asarray(params, dtype=float)
    if gx.dim == 2:
        return objective_gradient(gx, gy, params)
    q = params[:4]
    nq = np.linalg.norm(q)
    u = q / nq
    f, g = objective_gradient(gx, gy, np.concatenate([u, params[4:]]))
    gq = g[:4]
    g = g.copy()
    g[:4] = (gq - u * (u @ gq)) / nq
    return f, g


def _normalise_quat(params):
    params = np.array(params, dtype=float)
    if params.size == 7:
        params[:4] /= np.linalg.norm(params[:4])
    return params


@dataclass
class OptimiseOutput:
    theta: RigidTransform
    trace: List[float]
    iterations: int
    evaluations: int
    status: str

    @property
    def converged(self) -> bool:
        return self.status in ("gtol", "xtol")


def motion_scale(gx: Svgm) -> float:
    """Length that converts translations into rotation-comparable units."""
    L = math.sqrt(float(np.mean(np.sum(gx.means ** 2, axis=1))))
    return max(L, math.sqrt(gx.variance))


def optimise_rigid(gx: Svgm, gy: Svgm, theta0: Optional[RigidTransform] = None, *,
                   gtol: float = 1e-9, xtol: float = 1e-10, max_iter: int = 200) -> OptimiseOutput:
    """Local trust-region descent of :func:`l2_objective` from ``theta0``."""
    _check_pair(gx, gy)
    dim = gx.dim
    theta0 = RigidTransform.identity(dim) if theta0 is None else theta0
    if theta0.dim != dim:
        raise DimensionError(f"initial transform is {theta0.dim}D, mixtures are {dim}D")
    L = motion_scale(gx)
    if dim == 2:
        scale = np.array([1.0, 1.0 / L, 1.0 / L])
    else:
        scale = np.array([2.0, 2.0, 2.0, 2.0, 1.0 / L, 1.0 / L, 1.0 / L])
    radius = min(1.0, max(1e-3, math.sqrt(gx.variance) / L))

    try:
        res: OptimiseResult = minimise(
            lambda p: reduced_objective_gradient(gx, gy, p),
            theta0.params,
            scale=scale,
            project=_normalise_quat,
            gtol=gtol,
            xtol=xtol,
            max_iter=max_iter,
            radius=radius,
        )
    except NumericalFailure as exc:
        exc.last_x = RigidTransform.from_params(exc.last_x, dim)
        raise
    return OptimiseOutput(
        theta=RigidTransform.from_params(res.x, dim),
        trace=list(res.trace),
        iterations=res.iterations,
        evaluations=res.evaluations,
        status=res.status,
    )


# --------------------------------------------------------------------------
# annealed support vector registration

@dataclass
class RegistrationConfig:
    nu: float = 0.01
    gamma: Union[float, str] = "auto"
    anneal: Optional[float] = None
    max_rounds: int = 3
    round_tol: float = 1e-5
    gtol: float = 1e-9
    xtol: float = 1e-10
    max_iter: int = 200
    theta0: Optional[RigidTransform] = None

    def __post_init__(self):
        if self.anneal is not None and self.anneal < 1:
            raise ValueError("anneal factor must be >= 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if min(self.gtol, self.xtol, self.round_tol) <= 0 or self.max_iter < 1:
            raise ValueError("tolerances must be positive")
        if not (self.gamma == "auto" or float(self.gamma) > 0):
            raise ValueError("gamma must be positive or 'auto'")

    def anneal_for(self, dim: int) -> float:
        if self.anneal is not None:
            return float(self.anneal)
        return 10.0 if dim == 2 else 2.0


@dataclass
class RoundRecord:
    gamma: float
    m: int
    n: int
    iterations: int
    trace: List[float]
    status: str
    seconds: float = 0.0


@dataclass
class RegistrationResult:
    theta_star: RigidTransform
    final_objective: float
    rounds: List[RoundRecord] = field(default_factory=list)
    converged: bool = False


def gamma_auto(X: PointsLike, Y: PointsLike) -> float:
    """Kernel width from the scale of the fixed scene set: ``1 / (2 sigma_hat^2)``."""
    as_pointset(X)
    s = estimate_scale(Y)
    return 1.0 / (2.0 * s * s)


def anneal_loop(build, dim, gamma, config: RegistrationConfig) -> RegistrationResult:
    """Shared outer loop: ``build(gamma) -> (gx, gy)`` per round, warm-started optimisation."""
    theta = config.theta0 or RigidTransform.identity(dim)
    delta = config.anneal_for(dim)
    result = RegistrationResult(theta_star=theta, final_objective=float("nan"))
    prev_f = None
    for k in range(config.max_rounds):
        t0 = time.perf_counter()
        try:
            gx, gy = build(gamma)
            out = optimise_rigid(gx, gy, theta, gtol=config.gtol,
                                 xtol=config.xtol, max_iter=config.max_iter)
        except Exception as exc:
            raise RegistrationError(k, exc) from exc
        theta = out.theta
        f = out.trace[-1]
        result.rounds.append(RoundRecord(
            gamma=gamma, m=len(gx), n=len(gy), iterations=out.iterations,
            trace=out.trace, status=out.status,
            seconds=time.perf_counter() - t0))
        result.theta_star, result.final_objective = theta, f
        result.converged = out.converged
        if delta == 1.0:
            break
        if prev_f is not None and abs(f - prev_f) <= config.round_tol * abs(prev_f):
            break
        prev_f = f
        gamma *= delta
    return result


def svr(X: PointsLike, Y: PointsLike, config: Optional[RegistrationConfig] = None) -> RegistrationResult:
    """Register moving model ``X`` onto fixed scene ``Y``.

    Each round trains one-class SVMs on both sets at the current kernel width,
    maps them to mixtures, refines the motion and multiplies gamma by the
    anneal factor.
    """
    config = config or RegistrationConfig()
    X, Y = as_pointset(X), as_pointset(Y)
    if X.dim != Y.dim:
        raise DimensionError(f"model is {X.dim}D, scene is {Y.dim}D")
    gamma = gamma_auto(X, Y) if config.gamma == "auto" else float(config.gamma)

    def build(g):
        return (svm_to_gmm(train(X, config.nu, g)),
                svm_to_gmm(train(Y, config.nu, g)))

    return anneal_loop(build, X.dim, gamma, config)
