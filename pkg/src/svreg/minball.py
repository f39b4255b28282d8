"""Exact minimum covering ball (circle in 2D, sphere in 3D).

Welzl's move-to-front variant; recursion depth is bounded by ``D + 1`` and the
expected running time is linear after a random shuffle.
"""

import numpy as np

_EPS = 1e-10


def _ball_through(boundary):
    """Smallest ball with every point of ``boundary`` on its surface."""
    if not boundary:
        return None, -1.0
    p0 = boundary[0]
    if len(boundary) == 1:
        return p0.copy(), 0.0
    A = np.array([p - p0 for p in boundary[1:]])
    b = 0.5 * np.einsum("ij,ij->i", A, A)
    # centre restricted to the affine hull: c = p0 + A^T lam
    lam = np.linalg.lstsq(A @ A.T, b, rcond=None)[0]
    c = p0 + A.T @ lam
    return c, float(np.sum((c - p0) ** 2))


def _contains(c, r2, p):
    return c is not None and np.sum((p - c) ** 2) <= r2 * (1 + _EPS) + _EPS


def _mtf(pts, end, boundary, dim):
    c, r2 = _ball_through(boundary)
    if len(boundary) == dim + 1:
        return c, r2
    i = 0
    while i < end:
        p = pts[i]
        if not _contains(c, r2, p):
            c, r2 = _mtf(pts, i, boundary + [p], dim)
            # move to front
            pts.insert(0, pts.pop(i))
        i += 1
    return c, r2


def min_covering_ball(points, rng=None):
    """Centre and radius of the smallest ball containing every point."""
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or len(P) == 0:
        raise ValueError("need a non-empty (n, D) array")
    rng = np.random.default_rng(0) if rng is None else rng
    order = rng.permutation(len(P))
    pts = [P[i] for i in order]
    c, r2 = _mtf(pts, len(pts), [], P.shape[1])
    return np.asarray(c, dtype=float), float(np.sqrt(max(r2, 0.0)))
