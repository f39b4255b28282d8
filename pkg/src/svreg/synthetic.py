"""Parametric synthetic point-sets used in place of third-party datasets.

2D shapes are sampled uniformly by arc length from a dense polyline of the
curve(s) below; with ``seed=None`` the samples are evenly spaced, otherwise
their positions along the curve are drawn uniformly at random.  Every set is
centred on its centroid.

fish     x = cos s - sin^2 s / sqrt 2,  y = cos s sin s,           s in [0, 2pi)
contour  r = 1 + 0.25 sin 3s + 0.15 cos(2s + 0.5)                 (closed, polar)
glyph    circular arc r = 1, s in [0.35pi, 2pi), plus bar y = 0, x in [0.25, 1]
road     y = 0.3 sin 2x (x in [-1.5, 1.5]); x = 0.4 + 0.2 cos 3y (y in [-1, 1.2]);
         y = -0.8 + 0.6 x + 0.1 sin 5x (x in [-1.2, 0.3])
blob3d   surface r(u) = 1 + 0.35 exp(-|u-a|^2/0.15) + 0.2 exp(-|u-b|^2/0.08)
         + 0.15 u_x u_y over unit directions u, a = (0.8, 0.6, 0), b = (-0.3, 0, 0.95);
         directions uniform on the sphere (random if seeded, Fibonacci lattice otherwise)
"""

from __future__ import annotations

import math
from typing import Callable, Dict, List, Optional

import numpy as np

from .pointset import PointSet, make_rng

_DENSE = 20_000


def _sample_curves(curves: List[np.ndarray], n: int, seed) -> np.ndarray:
    lengths = [np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(c, axis=0), axis=1))])
               for c in curves]
    totals = np.array([l[-1] for l in lengths])
    offsets = np.concatenate([[0.0], np.cumsum(totals)])
    if seed is None:
        pos = (np.arange(n) + 0.5) * (offsets[-1] / n)
    else:
        pos = np.sort(make_rng(seed).uniform(0.0, offsets[-1], size=n))
    out = np.empty((n, 2))
    for k, (c, l) in enumerate(zip(curves, lengths)):
        sel = (pos >= offsets[k]) & (pos < offsets[k + 1]) if k < len(curves) - 1 \
            else pos >= offsets[k]
        s = pos[sel] - offsets[k]
        out[sel, 0] = np.interp(s, l, c[:, 0])
        out[sel, 1] = np.interp(s, l, c[:, 1])
    return out - out.mean(axis=0)


def _closed(x, y):
    return np.column_stack([np.append(x, x[0]), np.append(y, y[0])])


def fish(n: int = 500, seed=None) -> PointSet:
    s = np.linspace(0.0, 2 * math.pi, _DENSE, endpoint=False)
    x = np.cos(s) - np.sin(s) ** 2 / math.sqrt(2)
    y = np.cos(s) * np.sin(s)
    return PointSet(_sample_curves([_closed(x, y)], n, seed))


def contour(n: int = 1000, seed=None) -> PointSet:
    s = np.linspace(0.0, 2 * math.pi, _DENSE, endpoint=False)
    r = 1 + 0.25 * np.sin(3 * s) + 0.15 * np.cos(2 * s + 0.5)
    return PointSet(_sample_curves([_closed(r * np.cos(s), r * np.sin(s))], n, seed))


def glyph(n: int = 500, seed=None) -> PointSet:
    s = np.linspace(0.35 * math.pi, 2 * math.pi, _DENSE)
    arc = np.column_stack([np.cos(s), np.sin(s)])
    bar = np.column_stack([np.linspace(0.25, 1.0, 2000), np.zeros(2000)])
    return PointSet(_sample_curves([arc, bar], n, seed))


def road(n: int = 1500, seed=None) -> PointSet:
    x1 = np.linspace(-1.5, 1.5, _DENSE)
    y2 = np.linspace(-1.0, 1.2, _DENSE)
    x3 = np.linspace(-1.2, 0.3, _DENSE)
    curves = [
        np.column_stack([x1, 0.3 * np.sin(2 * x1)]),
        np.column_stack([0.4 + 0.2 * np.cos(3 * y2), y2]),
        np.column_stack([x3, -0.8 + 0.6 * x3 + 0.1 * np.sin(5 * x3)]),
    ]
    return PointSet(_sample_curves(curves, n, seed))


def _sphere_directions(n, seed):
    if seed is None:
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        phi = math.pi * (1 + math.sqrt(5)) * k
        rxy = np.sqrt(1 - z * z)
        return np.column_stack([rxy * np.cos(phi), rxy * np.sin(phi), z])
    u = make_rng(seed).normal(size=(n, 3))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def blob3d(n: int = 1000, seed=None) -> PointSet:
    u = _sphere_directions(n, seed)
    a = np.array([0.8, 0.6, 0.0])
    b = np.array([-0.3, 0.0, 0.95])
    r = (1 + 0.35 * np.exp(-np.sum((u - a) ** 2, axis=1) / 0.15)
         + 0.2 * np.exp(-np.sum((u - b) ** 2, axis=1) / 0.08)
         + 0.15 * u[:, 0] * u[:, 1])
    pts = u * r[:, None]
    return PointSet(pts - pts.mean(axis=0))


GENERATORS: Dict[str, Callable[..., PointSet]] = {
    "fish": fish,
    "contour": contour,
    "glyph": glyph,
    "road": road,
    "blob3d": blob3d,
}


def generate(name: str, n: Optional[int] = None, seed=None) -> PointSet:
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown synthetic set {name!r}; choose from {sorted(GENERATORS)}")
    return gen(seed=seed) if n is None else gen(n, seed=seed)
