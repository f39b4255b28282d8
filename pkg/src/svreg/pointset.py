"""Point-sets, rigid motions, scale estimation and perturbation generators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .minball import min_covering_ball


class DegenerateScaleError(ValueError):
    """Raised when the sample covariance of a point-set is singular."""


class DimensionError(ValueError):
    pass


def make_rng(seed) -> np.random.Generator:
    """The one generator used by every perturbation: numpy PCG64 seeded by ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class PointSet:
    """An ordered, immutable set of ``l`` points in 2 or 3 dimensions.

    ``truth`` optionally carries the ground-truth pose that maps this set onto
    its reference frame.
    """

    points: np.ndarray
    truth: Optional["RigidTransform"] = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("point-set must be a non-empty (l, D) array")
        if pts.shape[1] not in (2, 3):
            raise DimensionError(f"point dimension must be 2 or 3, got {pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point-set contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)

    def with_points(self, points) -> "PointSet":
        return PointSet(points, truth=self.truth)


PointsLike = Union[PointSet, np.ndarray, Sequence[Sequence[float]]]


def as_pointset(ps: PointsLike) -> PointSet:
    return ps if isinstance(ps, PointSet) else PointSet(ps)


# --------------------------------------------------------------------------
# rotations

def quat_normalise(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("cannot normalise a zero or non-finite quaternion")
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of the quaternion ``(w, x, y, z)``.

    This is the homogeneous quadratic form; it is a rotation only when ``q`` is
    unit length (otherwise it is ``|q|^2`` times one).
    """
    w, x, y, z = q
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def quat_matrix_partials(q) -> np.ndarray:
    """Partial derivatives of :func:`quat_to_matrix` w.r.t. ``w, x, y, z``; shape (4, 3, 3)."""
    w, x, y, z = q
    dw = 2 * np.array([[w, -z, y], [z, w, -x], [-y, x, w]])
    dx = 2 * np.array([[x, y, z], [y, -x, -w], [z, w, -x]])
    dy = 2 * np.array([[-y, x, w], [x, y, z], [-w, z, -y]])
    dz = 2 * np.array([[-z, -w, x], [w, -z, y], [x, y, z]])
    return np.stack([dw, dx, dy, dz])


def angle_to_matrix(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


def angle_matrix_partial(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, -c], [c, -s]])


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return np.concatenate([[math.cos(h)], math.sin(h) * axis])


def wrap_angle(a: float) -> float:
    """Wrap to the half-open interval (-pi, pi]."""
    w = math.remainder(a, 2 * math.pi)
    return math.pi if w == -math.pi else w


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> R x + t``; rotation is an angle in 2D and a unit quaternion (w, x, y, z) in 3D."""

    rotation: Union[float, np.ndarray]
    translation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(-1)
        if t.size not in (2, 3):
            raise DimensionError("translation must have 2 or 3 components")
        if t.size == 2:
            rot = float(np.asarray(self.rotation, dtype=float).reshape(()))
        else:
            rot = np.array(self.rotation, dtype=float).reshape(-1)
            if rot.size != 4:
                raise DimensionError("3D rotation must be a quaternion (w, x, y, z)")
            rot = quat_normalise(rot)
            rot.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @property
    def dim(self) -> int:
        return self.translation.size

    @classmethod
    def identity(cls, dim: int) -> "RigidTransform":
        if dim == 2:
            return cls(0.0, np.zeros(2))
        if dim == 3:
            return cls([1.0, 0.0, 0.0, 0.0], np.zeros(3))
        raise DimensionError(f"dimension must be 2 or 3, got {dim}")

    @classmethod
    def from_params(cls, theta, dim: int) -> "RigidTransform":
        theta = np.asarray(theta, dtype=float)
        if dim == 2:
            return cls(theta[0], theta[1:3])
        return cls(theta[:4], theta[4:7])

    @property
    def params(self) -> np.ndarray:
        """Flat parameter vector: (angle, tx, ty) or (w, x, y, z, tx, ty, tz)."""
        return np.concatenate([np.atleast_1d(self.rotation), self.translation])

    @property
    def matrix(self) -> np.ndarray:
        if self.dim == 2:
            return angle_to_matrix(self.rotation)
        return quat_to_matrix(self.rotation)

    @property
    def quaternion(self) -> np.ndarray:
        """Unit quaternion; 2D angles are lifted to a rotation about z."""
        if self.dim == 2:
            return quat_from_axis_angle([0.0, 0.0, 1.0], self.rotation)
        return np.array(self.rotation)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.dim:
            raise DimensionError(
                f"transform is {self.dim}D but points are {pts.shape[-1]}D")
        return pts @ self.matrix.T + self.translation

    def inverse(self) -> "RigidTransform":
        if self.dim == 2:
            rot = -self.rotation
            t = -(angle_to_matrix(rot) @ self.translation)
            return RigidTransform(rot, t)
        w, x, y, z = self.rotation
        qi = np.array([w, -x, -y, -z])
        return RigidTransform(qi, -(quat_to_matrix(qi) @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        if other.dim != self.dim:
            raise DimensionError("cannot compose transforms of different dimension")
        t = self.matrix @ other.translation + self.translation
        if self.dim == 2:
            return RigidTransform(self.rotation + other.rotation, t)
        return RigidTransform(quat_multiply(self.rotation, other.rotation), t)

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation!r}, translation={self.translation.tolist()!r})"


def apply_transform(ps: PointsLike, T: RigidTransform) -> PointSet:
    ps = as_pointset(ps)
    if ps.dim != T.dim:
        raise DimensionError(f"point-set is {ps.dim}D but transform is {T.dim}D")
    return ps.with_points(T.apply(ps.points))


def rotation_error(T_est: RigidTransform, T_true: RigidTransform, *, with_dot: bool = False):
    """Angular distance between two rotations in radians.

    With ``with_dot=True`` also returns ``|q_est . q_true|`` (2D angles are
    lifted to quaternions about z).
    """
    if T_est.dim != T_true.dim:
        raise DimensionError("transforms have different dimensions")
    if T_est.dim == 2:
        err = abs(wrap_angle(T_est.rotation - T_true.rotation))
        dot = math.cos(0.5 * err)
    else:
        q1, q2 = np.asarray(T_est.rotation), np.asarray(T_true.rotation)
        for q in (q1, q2):
            if abs(np.linalg.norm(q) - 1.0) > 1e-9:
                raise ValueError("rotation_error needs unit quaternions")
        dot = min(1.0, abs(float(q1 @ q2)))
        # atan2 of the relative quaternion stays accurate near zero error
        r = quat_multiply(q1 * [1.0, -1.0, -1.0, -1.0], q2)
        err = 2.0 * math.atan2(float(np.linalg.norm(r[1:])), abs(float(r[0])))
    return (err, dot) if with_dot else err


def translation_error(T_est: RigidTransform, T_true: RigidTransform) -> float:
    return float(np.linalg.norm(T_est.translation - T_true.translation))


# --------------------------------------------------------------------------
# scale

def estimate_scale(ps: PointsLike) -> float:
    """Generalised standard deviation: ``|cov(X)|^(1/2D)`` with the ``l-1`` denominator."""
    X = np.asarray(as_pointset(ps).points)
    if X.shape[0] < 2:
        raise DegenerateScaleError("scale estimation needs at least two points")
    cov = np.cov(X, rowvar=False, ddof=1)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or not np.isfinite(logdet):
        raise DegenerateScaleError("point-set covariance is singular")
    return float(math.exp(logdet / (2 * X.shape[1])))


# --------------------------------------------------------------------------
# perturbations

@dataclass(frozen=True)
class PerturbationSpec:
    outlier_fraction: float = 0.0
    noise_fraction: float = 0.0
    occlusion_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("outlier_fraction", "noise_fraction", "occlusion_fraction"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")
        if self.occlusion_fraction >= 1:
            raise ValueError("occlusion_fraction must be < 1")


def _uniform_in_ball(rng, center, radius, count):
    dim = center.size
    out = np.empty((count, dim))
    filled = 0
    while filled < count:
        cand = rng.uniform(-1.0, 1.0, size=(2 * (count - filled) + 8, dim))
        cand = cand[np.einsum("ij,ij->i", cand, cand) <= 1.0]
        take = min(count - filled, len(cand))
        out[filled:filled + take] = cand[:take]
        filled += take
    return center + radius * out


def add_outliers(ps: PointsLike, fraction: float, seed) -> PointSet:
    """Append ``floor(fraction * l)`` points uniform in the minimum covering ball."""
    ps = as_pointset(ps)
    if fraction < 0:
        raise ValueError("outlier fraction must be non-negative")
    count = int(math.floor(fraction * len(ps)))
    if count == 0:
        return ps
    center, radius = min_covering_ball(ps.points)
    extra = _uniform_in_ball(make_rng(seed), center, radius, count)
    return ps.with_points(np.vstack([ps.points, extra]))


def add_noise(ps: PointsLike, fraction: float, seed) -> PointSet:
    """Add isotropic Gaussian noise with standard deviation ``fraction * estimate_scale(ps)``."""
    ps = as_pointset(ps)
    if fraction < 0:
        raise ValueError("noise fraction must be non-negative")
    if fraction == 0:
        return ps
    sd = fraction * estimate_scale(ps)
    rng = make_rng(seed)
    return ps.with_points(ps.points + rng.normal(0.0, sd, size=ps.points.shape))


def knn_indices(points: np.ndarray, query: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest points to ``query``; ties go to the lower index."""
    d2 = np.sum((points - query) ** 2, axis=1)
    if len(points) > 10_000:
        from scipy.spatial import cKDTree
        # over-fetch so that exact ties at the boundary can be resolved by index
        kk = min(len(points), k + 32)
        _, idx = cKDTree(points).query(query, k=kk)
        idx = np.atleast_1d(idx)
        cand = np.unique(np.concatenate([idx, np.flatnonzero(d2 <= d2[idx].max())]))
        order = cand[np.lexsort((cand, d2[cand]))]
        return order[:k]
    return np.lexsort((np.arange(len(points)), d2))[:k]


def occlude_knn(ps: PointsLike, fraction: float, seed, *, seed_index: Optional[int] = None) -> PointSet:
    """Remove a random point and its nearest neighbours, ``floor(fraction * l)`` points in total.

    ``seed_index`` pins the seed point instead of drawing it.
    """
    ps = as_pointset(ps)
    if not 0 <= fraction < 1:
        raise ValueError("occlusion fraction must lie in [0, 1)")
    count = int(math.floor(fraction * len(ps)))
    if count == 0:
        return ps
    if seed_index is None:
        seed_index = int(make_rng(seed).integers(len(ps)))
    drop = knn_indices(ps.points, ps.points[seed_index], count)
    keep = np.ones(len(ps), dtype=bool)
    keep[drop] = False
    return ps.with_points(ps.points[keep])


def perturb(ps: PointsLike, spec: PerturbationSpec) -> PointSet:
    """Occlusion, then noise, then outliers, each with its own sub-seed."""
    ps = as_pointset(ps)
    ss = np.random.SeedSequence(spec.seed).spawn(3)
    ps = occlude_knn(ps, spec.occlusion_fraction, ss[0])
    ps = add_noise(ps, spec.noise_fraction, ss[1])
    return add_outliers(ps, spec.outlier_fraction, ss[2])
