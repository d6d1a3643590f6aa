import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexmap.geometry import (
    GeometryError, contains, convex_hull, distance_to, hull_area, is_convex_ccw, normalize,
    region_gap, sample_inside, shoelace, signed_area,
)
from oracles import brute_hull, triangle_fan_area

SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]

# dyadic grid: orientation tests are exact, so the oracle and the hull agree bit for bit
coord = st.integers(-160, 160).map(lambda k: k / 16)
point = st.tuples(coord, coord)
cloud = st.lists(point, min_size=1, max_size=30)
fcoord = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_shoelace_examples():
    assert shoelace(SQUARE) == 1.0
    assert shoelace([(0, 0), (1, 0), (0, 1)]) == 0.5
    assert shoelace([(0, 0), (1, 1), (2, 2)]) == 0.0
    assert signed_area(SQUARE[::-1]) == -1.0
    with pytest.raises(GeometryError):
        shoelace([(0, 0), (1, 1)])


def test_hull_examples():
    h = convex_hull(SQUARE + [(0.5, 0.5)])
    assert len(h) == 4 and signed_area(h) > 0
    assert convex_hull([(2, 3)] * 5) == [(2.0, 3.0)]
    assert hull_area([(2, 3)] * 5) == 0.0
    # collinear points on an edge are dropped
    assert len(convex_hull(SQUARE + [(0.5, 0)])) == 4


def test_hull_of_disk_points():
    rng = np.random.default_rng(1)
    r = np.sqrt(rng.uniform(size=1000))
    a = rng.uniform(0, 2 * np.pi, 1000)
    pts = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    assert hull_area(pts) <= math.pi


def test_contains_examples():
    assert contains(SQUARE, (0.5, 0.5))
    assert not contains(SQUARE, (2, 2))
    assert contains(SQUARE, (0.5, 0.0))
    with pytest.raises(GeometryError):
        contains([(0, 0), (2, 0), (1, 0.2), (1, 2)], (1, 1))
    with pytest.raises(GeometryError):
        contains(SQUARE[::-1], (0.5, 0.5))


def test_region_gap_examples():
    assert region_gap(SQUARE, SQUARE) == 0.0
    assert region_gap(SQUARE, [(x + 1, y) for x, y in SQUARE]) == pytest.approx(1.0)
    dup = [SQUARE[0], SQUARE[0], SQUARE[1], SQUARE[2], SQUARE[2], SQUARE[3]]
    assert region_gap(SQUARE, convex_hull(dup)) == 0.0
    with pytest.raises(GeometryError):
        region_gap(SQUARE, [(0, 0), (1, 1), (2, 2)])


def test_normalize_and_distance():
    assert normalize([(0, 0), (0, 0), (1, 0), (0, 0)]) == [(0.0, 0.0), (1.0, 0.0)]
    assert distance_to(SQUARE, (2, 0.5)) == pytest.approx(1.0)
    assert distance_to(SQUARE, (0.3, 0.3)) == 0.0


def test_sample_inside_stays_inside():
    rng = np.random.default_rng(0)
    tri = [(0, 0), (2, 0), (0, 1)]
    for _ in range(200):
        assert contains(tri, sample_inside(tri, rng))


@settings(max_examples=200, deadline=None)
@given(cloud)
def test_hull_matches_brute_force(pts):
    h = convex_hull(pts)
    assert set(h) == set(brute_hull(pts))
    if len(h) >= 3:
        assert is_convex_ccw(h)
        assert shoelace(h) == pytest.approx(triangle_fan_area(brute_hull(pts)), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(cloud)
def test_hull_contains_its_points(pts):
    h = convex_hull(pts)
    for p in pts:
        assert contains(h, p, tol=1e-7)


@settings(max_examples=150, deadline=None)
@given(cloud, st.data())
def test_hull_area_monotone_in_subsets(pts, data):
    sub = data.draw(st.lists(st.sampled_from(pts), min_size=1))
    assert hull_area(sub) <= hull_area(pts) + 1e-9


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(fcoord, fcoord), min_size=3, max_size=20), st.integers(0, 19))
def test_shoelace_rotation_and_reversal(poly, k):
    k %= len(poly)
    a = shoelace(poly)
    scale = 1e-9 * max(1.0, sum(abs(x) + abs(y) for x, y in poly) ** 2)
    assert shoelace(poly[k:] + poly[:k]) == pytest.approx(a, abs=scale)
    assert shoelace(poly[::-1]) == pytest.approx(a, abs=scale)


@settings(max_examples=100, deadline=None)
@given(cloud, point)
def test_contains_monotone_in_tol(pts, q):
    h = convex_hull(pts)
    if contains(h, q, tol=1e-9):
        assert contains(h, q, tol=1e-3)
