"""Polygon helpers for PQ regions: area, hull, containment, distances."""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

CONTAINS_TOL = 1e-9
CONVEXITY_TOL = 1e-7

Point = tuple[float, float]


class GeometryError(ValueError):
    pass


def _cross(o: Sequence[float], a: Sequence[float], b: Sequence[float]) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def normalize(poly: Iterable[Sequence[float]], tol: float = 0.0) -> list[Point]:
    """Drop consecutive duplicate vertices (including the closing one)."""
    out: list[Point] = []
    for p in poly:
        pt = (float(p[0]), float(p[1]))
        if out and abs(pt[0] - out[-1][0]) <= tol and abs(pt[1] - out[-1][1]) <= tol:
            continue
        out.append(pt)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= tol and abs(out[0][1] - out[-1][1]) <= tol:
        out.pop()
    return out


def signed_area(poly: Sequence[Sequence[float]]) -> float:
    pts = np.asarray(poly, dtype=float)
    if len(pts) < 3:
        return 0.0
    p, q = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(p, np.roll(q, -1)) - np.dot(np.roll(p, -1), q))


def shoelace(poly: Sequence[Sequence[float]]) -> float:
    if len(poly) < 3:
        raise GeometryError("area needs at least 3 vertices")
    return abs(signed_area(poly))


def convex_hull(points: Iterable[Sequence[float]]) -> list[Point]:
    """Monotone chain; counter-clockwise, collinear points dropped."""
    pts = sorted(set((float(p[0]), float(p[1])) for p in points))
    if len(pts) <= 2:
        return pts
    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def hull_area(points: Iterable[Sequence[float]]) -> float:
    hull = convex_hull(points)
    return shoelace(hull) if len(hull) >= 3 else 0.0


def is_convex_ccw(poly: Sequence[Sequence[float]], tol: float = CONVEXITY_TOL) -> bool:
    """Every vertex lies on or left of every edge (edges shorter than ``tol`` skipped)."""
    pts = normalize(poly)
    n = len(pts)
    if n < 3:
        return True
    arr = np.asarray(pts)
    for i in range(n):
        a, b = arr[i], arr[(i + 1) % n]
        e = b - a
        length = math.hypot(e[0], e[1])
        if length <= tol:
            continue
        side = (e[0] * (arr[:, 1] - a[1]) - e[1] * (arr[:, 0] - a[0])) / length
        if side.min() < -tol:
            return False
    return signed_area(pts) >= 0.0


def contains(poly: Sequence[Sequence[float]], point: Sequence[float], tol: float = CONTAINS_TOL) -> bool:
    """Closed containment in a convex counter-clockwise polygon."""
    pts = normalize(poly)
    if not is_convex_ccw(pts):
        raise GeometryError("polygon must be convex and counter-clockwise")
    return _inside(pts, float(point[0]), float(point[1]), tol)


def _inside(pts: list[Point], x: float, y: float, tol: float) -> bool:
    n = len(pts)
    if n == 0:
        return False
    if n == 1:
        return math.hypot(x - pts[0][0], y - pts[0][1]) <= tol
    if n == 2 or signed_area(pts) == 0.0:
        return _dist_polyline((x, y), pts) <= tol
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]
        length = math.hypot(ex, ey)
        if length <= CONVEXITY_TOL:
            continue
        # signed distance to the left of edge a->b
        if (ex * (y - a[1]) - ey * (x - a[0])) / length < -tol:
            return False
    return True


def _dist_segment(p: Point, a: Sequence[float], b: Sequence[float]) -> float:
    ax, ay = a[0], a[1]
    dx, dy = b[0] - ax, b[1] - ay
    den = dx * dx + dy * dy
    s = 0.0 if den == 0 else max(0.0, min(1.0, ((p[0] - ax) * dx + (p[1] - ay) * dy) / den))
    return math.hypot(p[0] - ax - s * dx, p[1] - ay - s * dy)


def _dist_polyline(p: Point, pts: Sequence[Sequence[float]]) -> float:
    n = len(pts)
    return min(_dist_segment(p, pts[i], pts[(i + 1) % n]) for i in range(n))


def distance_to(poly: Sequence[Sequence[float]], point: Sequence[float]) -> float:
    """Euclidean distance from ``point`` to a convex polygon (0 inside)."""
    pts = normalize(poly)
    p = (float(point[0]), float(point[1]))
    if _inside(pts, p[0], p[1], 0.0):
        return 0.0
    if len(pts) == 1:
        return math.hypot(p[0] - pts[0][0], p[1] - pts[0][1])
    return _dist_polyline(p, pts)


def region_gap(a: Sequence[Sequence[float]], b: Sequence[Sequence[float]]) -> float:
    """Hausdorff distance between two convex polygons.

    For convex sets the largest distance from one set to the other is
    attained at a vertex, so the vertex sweeps below are exact.
    """
    pa, pb = normalize(a), normalize(b)
    if len(pa) < 3 or len(pb) < 3 or shoelace(pa) == 0.0 or shoelace(pb) == 0.0:
        raise GeometryError("region_gap needs two non-degenerate polygons")
    ha = convex_hull(pa)
    hb = convex_hull(pb)
    d_ab = max(distance_to(hb, v) for v in ha)
    d_ba = max(distance_to(ha, v) for v in hb)
    return max(d_ab, d_ba)


def bounding_box(poly: Sequence[Sequence[float]]) -> tuple[float, float, float, float]:
    pts = np.asarray(poly, dtype=float)
    return float(pts[:, 0].min()), float(pts[:, 0].max()), float(pts[:, 1].min()), float(pts[:, 1].max())


def sample_inside(poly: Sequence[Sequence[float]], rng: np.random.Generator, max_tries: int = 100000) -> Point:
    """Uniform point of a convex polygon by rejection from its bounding box."""
    pts = normalize(poly)
    if len(pts) < 3 or shoelace(pts) == 0.0:
        # degenerate region: pick a point on the segment / the point itself
        a, b = pts[0], pts[-1]
        s = rng.uniform()
        return (a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]))
    if not is_convex_ccw(pts):
        raise GeometryError("polygon must be convex and counter-clockwise")
    x0, x1, y0, y1 = bounding_box(pts)
    for _ in range(max_tries):
        p = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
        if _inside(pts, p[0], p[1], 0.0):
            return p
    raise GeometryError("rejection sampling failed")
