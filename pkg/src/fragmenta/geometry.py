"""Exact 2-D primitives: contours, rigid transforms, circles, distances,
and closed-form least-squares rigid fitting.

Everything here is pure and stateless. Points are (x, y) pixel
coordinates stored as float64; contours keep a uniform counter-clockwise
orientation (positive shoelace area) so that downstream ground-truth
correspondence always runs the shared cut in opposite directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateConfigurationError,
    InvalidGeometryError,
    InvalidInputError,
)


class Point2(NamedTuple):
    x: float
    y: float


def as_points(arr) -> np.ndarray:
    """Coerce array-like input to an (N, 2) float64 array."""
    pts = np.asarray(arr, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInputError(f"expected (N, 2) points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class Circle:
    center: Point2
    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InvalidGeometryError(f"circle radius must be > 0, got {self.radius}")


@dataclass
class RigidTransform2D:
    """Proper rigid motion: rotation by theta (radians) then translation."""

    theta: float
    tx: float
    ty: float

    def __post_init__(self):
        t = math.remainder(self.theta, math.tau)
        if t <= -math.pi:
            t += math.tau
        self.theta = t

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def apply(self, points) -> np.ndarray:
        pts = as_points(points)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return RigidTransform2D(-self.theta, -(c * self.tx + s * self.ty), -(-s * self.tx + c * self.ty))

    @classmethod
    def identity(cls) -> "RigidTransform2D":
        return cls(0.0, 0.0, 0.0)


def signed_area(points) -> float:
    """Shoelace signed area; positive for the orientation used system-wide."""
    pts = as_points(points)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


class OrderedContour:
    """Closed boundary as an ordered point sequence.

    Orientation is normalized at creation (reversal keeps the start point)
    unless ``enforce_orientation=False``.
    """

    def __init__(self, points, closed: bool = True, enforce_orientation: bool = True):
        pts = as_points(points)
        if not np.all(np.isfinite(pts)):
            raise InvalidGeometryError("contour points must be finite")
        if closed and enforce_orientation and len(pts) >= 3 and signed_area(pts) < 0:
            pts = np.concatenate([pts[:1], pts[:0:-1]], axis=0)
        self.points = pts
        self.closed = closed

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, idx):
        return self.points[idx]


def circumcircle(rect: Sequence[float]) -> Circle:
    """Circle through all four corners of an axis-aligned rectangle
    (x0, y0, x1, y1)."""
    x0, y0, x1, y1 = (float(v) for v in rect)
    w, h = abs(x1 - x0), abs(y1 - y0)
    if w <= 0 or h <= 0:
        raise InvalidGeometryError(f"degenerate rectangle {rect!r}")
    center = Point2((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    return Circle(center, math.hypot(w, h) / 2.0)


def smaller_arc_length(circle: Circle, a, b) -> float:
    """Arc length r * delta for the smaller central angle delta in [0, pi]."""
    va = np.asarray(a, dtype=np.float64) - circle.center
    vb = np.asarray(b, dtype=np.float64) - circle.center
    tol = 1e-6 * circle.radius
    for v in (va, vb):
        if abs(np.hypot(v[0], v[1]) - circle.radius) > tol:
            raise InvalidGeometryError("point does not lie on the circle")
    cross = va[0] * vb[1] - va[1] * vb[0]
    dot = va[0] * vb[0] + va[1] * vb[1]
    delta = math.atan2(abs(cross), dot)
    return circle.radius * delta


def segment_contour_intersections(contour, a, b, dedup_tol: float = 1e-9):
    """Intersections of the infinite line through a, b with a closed polygon.

    Returns a list of (Point2, edge index) ordered by projection onto the
    a -> b direction; crossings closer than ``dedup_tol`` collapse to one.
    """
    pts = contour.points if isinstance(contour, OrderedContour) else as_points(contour)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    direction = b - a
    if np.hypot(*direction) == 0:
        raise InvalidGeometryError("line requires two distinct points")
    rel = pts - a
    side = direction[0] * rel[:, 1] - direction[1] * rel[:, 0]
    nxt = np.roll(side, -1)

    hits = []
    for i in np.nonzero(side == 0)[0]:
        hits.append((pts[i], int(i)))
    crossing = np.nonzero((side * nxt) < 0)[0]
    nxt_pts = np.roll(pts, -1, axis=0)
    for i in crossing:
        t = side[i] / (side[i] - nxt[i])
        p = pts[i] + t * (nxt_pts[i] - pts[i])
        hits.append((p, int(i)))
    if not hits:
        return []

    hits.sort(key=lambda h: float(np.dot(np.asarray(h[0]) - a, direction)))
    deduped = [hits[0]]
    for p, i in hits[1:]:
        q = np.asarray(deduped[-1][0], dtype=np.float64)
        if np.hypot(*(np.asarray(p) - q)) > dedup_tol:
            deduped.append((p, i))
    return [(Point2(float(p[0]), float(p[1])), i) for p, i in deduped]


def polygon_area(contour) -> float:
    """Absolute shoelace area of a closed contour."""
    pts = contour.points if isinstance(contour, OrderedContour) else as_points(contour)
    if len(pts) < 3:
        raise InvalidGeometryError("polygon area needs at least 3 points")
    return abs(signed_area(pts))


def hausdorff_distance(set_a, set_b) -> float:
    """Symmetric Hausdorff distance between two point sets."""
    pa, pb = as_points(set_a), as_points(set_b)
    if len(pa) == 0 or len(pb) == 0:
        raise InvalidInputError("hausdorff distance needs non-empty sets")
    d_ab = cKDTree(pb).query(pa)[0].max()
    d_ba = cKDTree(pa).query(pb)[0].max()
    return float(max(d_ab, d_ba))


def rigid_fit(src, dst) -> RigidTransform2D:
    """Least-squares proper rigid transform mapping src onto dst.

    Closed form: centroid subtraction, then the rotation angle from the
    accumulated cross/dot products. Reflections are never returned.
    """
    ps, pd = as_points(src), as_points(dst)
    if len(ps) != len(pd):
        raise InvalidInputError("src and dst must have equal length")
    if len(ps) < 2:
        raise InvalidInputError("rigid fit needs at least 2 correspondences")
    cs = ps.mean(axis=0)
    cd = pd.mean(axis=0)
    qs = ps - cs
    qd = pd - cd
    if float(np.max(np.abs(qs))) < 1e-12:
        raise DegenerateConfigurationError("all source points coincide")
    cross = float(np.sum(qs[:, 0] * qd[:, 1] - qs[:, 1] * qd[:, 0]))
    dot = float(np.sum(qs[:, 0] * qd[:, 0] + qs[:, 1] * qd[:, 1]))
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    tx = cd[0] - (c * cs[0] - s * cs[1])
    ty = cd[1] - (s * cs[0] + c * cs[1])
    return RigidTransform2D(theta, float(tx), float(ty))
