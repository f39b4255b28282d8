"""Small dense trust-region quasi-Newton minimiser.

Meant for the 3- and 7-parameter rigid-motion problems: the Hessian
approximation starts from forward differences of the analytic gradient and is
then updated with damped BFGS; each trust-region subproblem is solved exactly
through an eigendecomposition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np


class NumericalFailure(FloatingPointError):
    """Objective or gradient became non-finite; ``last_x`` is the last good iterate."""

    def __init__(self, message, last_x):
        super().__init__(message)
        self.last_x = last_x


@dataclass
class OptimiseResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    trace: List[float] = field(default_factory=list)
    iterations: int = 0
    evaluations: int = 0
    status: str = "max_iter"

    @property
    def converged(self) -> bool:
        return self.status in ("gtol", "xtol")


def solve_trust_region(g: np.ndarray, B: np.ndarray, radius: float) -> np.ndarray:
    """Exact minimiser of ``g.p + p.B.p/2`` subject to ``|p| <= radius``."""
    lam, V = np.linalg.eigh(0.5 * (B + B.T))
    gt = V.T @ g
    lmin = lam[0]
    if lmin > 0:
        p = -gt / lam
        if np.linalg.norm(p) <= radius:
            return V @ p

    def step_norm(mu):
        return np.linalg.norm(gt / (lam + mu))

    lo = max(0.0, -lmin)
    # hard case: g has no component along the lowest eigenvector
    small = np.abs(gt) <= 1e-14 * max(1.0, np.linalg.norm(g))
    if lmin <= 0 and small[0]:
        mask = lam > lmin + 1e-14 * max(1.0, abs(lmin))
        p = np.zeros_like(gt)
        p[mask] = -gt[mask] / (lam[mask] - lmin)
        pn = np.linalg.norm(p)
        if pn <= radius:
            tau = np.sqrt(max(radius ** 2 - pn ** 2, 0.0))
            p[0] += tau
            return V @ p

    hi = lo + np.linalg.norm(g) / radius + 1.0
    while step_norm(hi) > radius:
        hi *= 2.0
    lo_b = lo + 1e-300
    for _ in range(200):
        mid = 0.5 * (lo_b + hi)
        if step_norm(mid) > radius:
            lo_b = mid
        else:
            hi = mid
        if hi - lo_b <= 1e-14 * hi:
            break
    return V @ (-gt / (lam + hi))


def _fd_hessian(fun_grad, x, g, scale, h, project):
    n = x.size
    H = np.empty((n, n))
    evals = 0
    for k in range(n):
        xk = x.copy()
        xk[k] += h / scale[k]
        _, gk = fun_grad(xk)
        evals += 1
        H[:, k] = (gk - g) / scale / h
    H = 0.5 * (H + H.T)
    lam, V = np.linalg.eigh(H)
    floor = 1e-6 * max(np.abs(lam).max(), 1e-300)
    lam = np.maximum(np.abs(lam), floor)
    return (V * lam) @ V.T, evals


def minimise(
    fun_grad: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x0,
    *,
    scale=None,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    gtol: float = 1e-9,
    xtol: float = 1e-10,
    max_iter: int = 200,
    radius: float = 1.0,
    max_radius: float = np.pi,
    fd_step: float = 1e-6,
) -> OptimiseResult:
    """Minimise a smooth function with a monotone trust-region method.

    ``scale`` maps parameters to comparable units; the trust region and the
    tolerances live in the scaled space.  ``gtol`` is relative to ``|f|``.
    ``project`` is applied after every step (e.g. quaternion normalisation).
    """
    project = project or (lambda v: v)
    x = project(np.array(x0, dtype=float))
    scale = np.ones_like(x) if scale is None else np.asarray(scale, dtype=float)
    f, g = fun_grad(x)
    evals = 1
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NumericalFailure("non-finite objective at the initial point", x)

    res = OptimiseResult(x=x, fun=f, grad=g, trace=[f])
    B = None
    for it in range(max_iter):
        gs = g / scale
        if np.linalg.norm(gs) <= gtol * max(abs(f), 1e-300):
            res.status = "gtol"
            break
        if B is None:
            B, n_fd = _fd_hessian(fun_grad, x, g, scale, fd_step * max(radius, 1e-3), project)
            evals += n_fd
        p = solve_trust_region(gs, B, radius)
        pred = -(gs @ p + 0.5 * p @ B @ p)
        x_new = project(x + p / scale)
        f_new, g_new = fun_grad(x_new)
        evals += 1
        res.iterations = it + 1
        if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
            raise NumericalFailure("non-finite objective or gradient", x)

        s = (x_new - x) * scale
        snorm = np.linalg.norm(s)
        ratio = (f - f_new) / pred if pred > 0 else -1.0
        if ratio > 1e-4 and f_new <= f:
            y = (g_new - g) / scale
            Bs = B @ s
            sBs = s @ Bs
            sy = s @ y
            if sBs > 0:
                # Powell damping keeps B positive definite
                theta = 1.0 if sy >= 0.2 * sBs else 0.8 * sBs / (sBs - sy)
                r = theta * y + (1 - theta) * Bs
                B = B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / (s @ r)
            x, f, g = x_new, f_new, g_new
            res.trace.append(f)
        if ratio < 0.25:
            radius = 0.25 * np.linalg.norm(p)
        elif ratio > 0.75 and np.linalg.norm(p) >= 0.99 * radius:
            radius = min(2.0 * radius, max_radius)
        if snorm <= xtol or radius <= xtol:
            res.status = "xtol"
            break
    else:
        gs = g / scale
        if np.linalg.norm(gs) <= gtol * max(abs(f), 1e-300):
            res.status = "gtol"

    res.x, res.fun, res.grad, res.evaluations = x, f, g, evals
    return res
