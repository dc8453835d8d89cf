"""Flat 3-torus of side ``2*rho`` with the closed unit ball removed.

Points are stored in the canonical cell ``[-rho, rho)^3``.  The obstacle is
the closed unit ball centred at the origin; its boundary normal pointing into
the domain is radial, and the shape operator of the unit sphere is the
identity.  ``DomainGeometry.exterior()`` gives the same obstacle in free space
(no wrapping).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

#: relative tolerance for "lies on the unit sphere"
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class DomainGeometry:
    """Torus of side ``2*rho`` minus the unit ball, or R^3 minus the unit ball.

    ``rho = inf`` encodes the exterior free-space mode.
    """

    rho: float = math.inf

    def __post_init__(self):
        if math.isnan(self.rho) or self.rho <= 1.0:
            raise GeometryError(f"rho must exceed 1 (got {self.rho})")

    @classmethod
    def torus(cls, rho: float) -> "DomainGeometry":
        if not math.isfinite(rho):
            raise GeometryError("torus mode needs a finite rho")
        return cls(float(rho))

    @classmethod
    def exterior(cls) -> "DomainGeometry":
        return cls(math.inf)

    @property
    def is_torus(self) -> bool:
        return math.isfinite(self.rho)

    @property
    def side(self) -> float:
        return 2.0 * self.rho

    @property
    def max_separation(self) -> float:
        """Largest possible minimal-image distance (``rho*sqrt(3)``)."""
        return self.rho * math.sqrt(3.0)

    def __str__(self):
        return f"Torus(rho={self.rho:g})" if self.is_torus else "ExteriorFreeSpace"


def _as_vec(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != 3:
        raise GeometryError(f"expected 3-vectors, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError("non-finite coordinate")
    return a


def _wrap(a: np.ndarray, rho: float) -> np.ndarray:
    side = 2.0 * rho
    out = a - side * np.floor((a + rho) / side)
    # rounding can leave a coordinate exactly at +rho or just below -rho
    out = np.where(out >= rho, out - side, out)
    out = np.where(out < -rho, out + side, out)
    return out


def canonicalize(raw, geom: DomainGeometry) -> np.ndarray:
    """Map coordinates into the half-open cell ``[-rho, rho)^3``.

    Identity in exterior mode.  Works on a single 3-vector or an ``(n, 3)``
    array.
    """
    a = _as_vec(raw)
    if not geom.is_torus:
        return a.copy()
    return _wrap(a, geom.rho)


def min_image_diff(x, y, geom: DomainGeometry) -> np.ndarray:
    """Shortest representative of ``x - y``; ties go to ``-rho``."""
    d = _as_vec(x) - _as_vec(y)
    if not geom.is_torus:
        return d
    return _wrap(d, geom.rho)


def geodesic_dist(x, y, geom: DomainGeometry):
    """Flat-torus distance; the obstacle is ignored."""
    return np.linalg.norm(min_image_diff(x, y, geom), axis=-1)


def dist_to_obstacle(x, geom: DomainGeometry):
    """Euclidean distance from a canonical point to the nearest obstacle."""
    return np.linalg.norm(canonicalize(x, geom), axis=-1) - 1.0


def _check_on_sphere(x: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(r - 1.0) > BOUNDARY_TOL):
        raise GeometryError("point is not on the unit sphere")
    return r


def inward_normal(x) -> np.ndarray:
    """Unit normal at a sphere point, pointing into the domain (radially out)."""
    x = _as_vec(x)
    r = _check_on_sphere(x)
    return x / r[..., None] if x.ndim > 1 else x / r


def tangent_project(x, v) -> np.ndarray:
    """Orthogonal projection of ``v`` onto the tangent plane at sphere point ``x``."""
    n = inward_normal(x)
    v = _as_vec(v)
    return v - np.sum(v * n, axis=-1, keepdims=True) * n


def shape_apply(x, v) -> np.ndarray:
    """Shape operator of the unit sphere: the identity on tangent vectors."""
    inward_normal(x)
    return _as_vec(v).copy()


def is_on_sphere(x, tol: float = BOUNDARY_TOL) -> bool:
    return abs(float(np.linalg.norm(_as_vec(x))) - 1.0) <= tol
