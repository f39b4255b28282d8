"""Support-vector parametrised Gaussian mixtures.

A trained one-class SVM maps onto an isotropic Gaussian mixture with means at
the support vectors, variance ``1 / (2 gamma)`` and weights
``alpha_i (2 pi sigma^2)^(D/2)``.  The SVM bias becomes a very broad density for
the negative class that only matters for classification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .ocsvm import SvmModel

BIAS_VARIANCE_FACTOR = 1e6


@dataclass(frozen=True, eq=False)
class Svgm:
    means: np.ndarray
    variance: float
    weights: np.ndarray
    bias_weight: Optional[float] = None
    bias_variance: Optional[float] = None
    bias_mean: Optional[np.ndarray] = None

    def __post_init__(self):
        means = np.array(self.means, dtype=float)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if means.ndim != 2 or means.shape[0] < 1:
            raise ValueError("mixture needs at least one component")
        if weights.shape[0] != means.shape[0]:
            raise ValueError("one weight per mean required")
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        if np.any(weights <= 0):
            raise ValueError("mixture weights must be positive")
        means.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


def _normaliser(variance, dim):
    return (2.0 * math.pi * variance) ** (-0.5 * dim)


def svm_to_gmm(model: SvmModel, bias_variance: Optional[float] = None) -> Svgm:
    """Map an SVM onto its equivalent mixture.

    ``bias_variance`` defaults to ``1e6`` times the squared diagonal of the
    support vectors' bounding box, centred on that box.
    """
    sv = np.asarray(model.support_vectors, dtype=float)
    dim = sv.shape[1]
    variance = 1.0 / (2.0 * model.gamma)
    weights = np.asarray(model.alphas) / _normaliser(variance, dim)
    lo, hi = sv.min(axis=0), sv.max(axis=0)
    if bias_variance is None:
        diag2 = float(np.sum((hi - lo) ** 2))
        if diag2 == 0.0:
            diag2 = variance
        bias_variance = BIAS_VARIANCE_FACTOR * diag2
    bias_weight = model.rho / _normaliser(bias_variance, dim)
    return Svgm(sv, variance, weights, bias_weight=bias_weight,
                bias_variance=bias_variance, bias_mean=0.5 * (lo + hi))


def normal_pdf(x, mean, variance):
    """Isotropic normal density; ``x`` may be a batch of points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d2 = np.sum((x - np.asarray(mean, dtype=float)) ** 2, axis=-1)
    return _normaliser(variance, x.shape[-1]) * np.exp(-0.5 * d2 / variance)


def density(g: Svgm, x) -> np.ndarray:
    """Mixture density (bias density excluded) at one point or an (n, D) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != g.dim:
        raise ValueError(f"mixture is {g.dim}D, query is {x.shape[1]}D")
    d2 = cdist(x, g.means, "sqeuclidean")
    p = _normaliser(g.variance, g.dim) * (np.exp(-0.5 * d2 / g.variance) @ g.weights)
    return p[0] if single else p


def bias_density(g: Svgm, x) -> np.ndarray:
    if g.bias_weight is None:
        raise ValueError("mixture carries no bias density")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return g.bias_weight * normal_pdf(x, g.bias_mean, g.bias_variance)


def decide(g: Svgm, x) -> np.ndarray:
    """Two-class decision: +1 where the inlier mixture beats the bias density, else -1."""
    return np.where(density(g, np.atleast_2d(x)) > bias_density(g, x), 1, -1)


def gaussian_product_integral(mu1, var1, mu2, var2) -> float:
    """``integral N(x|mu1, var1) N(x|mu2, var2) dx = N(0 | mu1 - mu2, var1 + var2)``."""
    if not (var1 > 0 and var2 > 0):
        raise ValueError("variances must be positive")
    d = np.atleast_1d(np.asarray(mu1, dtype=float) - np.asarray(mu2, dtype=float))
    v = var1 + var2
    return float(_normaliser(v, d.size) * math.exp(-0.5 * float(d @ d) / v))


def self_peak(g: Svgm) -> np.ndarray:
    """Each weighted component evaluated at its own mean, ``phi_i (2 pi sigma^2)^(-D/2)``.

    This is the first term of the merge gain; kept separate so the reading can
    be revised in one place.
    """
    return g.weights * _normaliser(g.variance, g.dim)


def merge_gain(gx: Svgm, gy: Svgm) -> np.ndarray:
    """Per-component gain of ``gx`` over ``gy`` at the means of ``gx``."""
    return self_peak(gx) - density(gy, gx.means)


def gmmerge(gx: Svgm, gy: Svgm, t: float, *, total: Optional[float] = None) -> Svgm:
    """Parsimoniously merge aligned mixture ``gx`` into ``gy``.

    Each component of ``gx`` is re-weighted by ``clip(t * gain, 0, 1)`` and kept
    only if its weight stays positive.  By default the output keeps the absolute
    scale of ``gy`` plus the accepted mass; pass ``total`` to rescale the merged
    weights to a different sum.
    """
    if gx.dim != gy.dim:
        raise ValueError("cannot merge mixtures of different dimension")
    if not math.isclose(gx.variance, gy.variance, rel_tol=1e-12, abs_tol=0.0):
        raise ValueError(
            f"mixture variances differ ({gx.variance!r} vs {gy.variance!r})")
    if not t >= 0:
        raise ValueError("merge parameter t must be non-negative")

    scale = np.clip(t * merge_gain(gx, gy), 0.0, 1.0)
    new_w = gx.weights * scale
    keep = new_w > 0
    if not np.any(keep) and total is None:
        return gy

    means = np.vstack([gy.means, gx.means[keep]])
    weights = np.concatenate([gy.weights, new_w[keep]])
    if total is not None:
        weights = weights * (total / weights.sum())
    return replace(gy, means=means, weights=weights)
