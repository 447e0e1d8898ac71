import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avsafety.geometry import (Polyline, arc_points, box_corners, box_distance, boxes_overlap, clip_polygon,
                               overlap_centroid, wrap_angle)

finite = st.floats(-50, 50, allow_nan=False)
heading = st.floats(-math.pi, math.pi, allow_nan=False)
size = st.floats(0.3, 6.0, allow_nan=False)


def test_polyline_pose_and_project_on_an_l_shape():
    pl = Polyline([(0, 0), (10, 0), (10, 10)])
    assert pl.length == pytest.approx(20.0)
    assert pl.pose(5.0) == pytest.approx((5.0, 0.0, 0.0))
    assert pl.pose(15.0, offset=1.0) == pytest.approx((9.0, 5.0, math.pi / 2))
    s, lat = pl.project((12.0, 5.0))
    assert (s, lat) == pytest.approx((15.0, -2.0))


def test_polyline_drops_repeated_points_and_rejects_degenerate():
    pl = Polyline([(0, 0), (0, 0), (3, 4)])
    assert len(pl.points) == 2 and pl.length == pytest.approx(5.0)
    with pytest.raises(ValueError):
        Polyline([(1, 1), (1, 1)])
    with pytest.raises(ValueError):
        Polyline([(1, 1)])


@given(st.floats(0.0, 1.0), st.floats(-1.5, 1.5))
def test_project_inverts_pose_on_an_arc(u, off):
    pl = Polyline(arc_points((0, 0), 30.0, 0.0, math.pi / 2, 60))
    s = u * pl.length
    x, y, _ = pl.pose(s, off)
    s2, lat2 = pl.project((x, y))
    assert s2 == pytest.approx(s, abs=0.05)
    assert lat2 == pytest.approx(off, abs=0.05)


def test_poses_matches_scalar_pose():
    pl = Polyline([(0, 0), (10, 0), (10, 10), (0, 20)])
    s = np.linspace(0, pl.length, 37)
    x, y, h = pl.poses(s, 0.5)
    for k in range(len(s)):
        assert (x[k], y[k]) == pytest.approx(pl.pose(s[k], 0.5)[:2], abs=1e-9)


@given(finite, finite, heading, size, size)
def test_box_corners_form_the_right_rectangle(x, y, h, length, width):
    c = box_corners(x, y, h, length, width)
    sides = np.linalg.norm(np.roll(c, -1, axis=0) - c, axis=1)
    assert sides == pytest.approx([width, length, width, length], rel=1e-9, abs=1e-9)
    assert c.mean(axis=0) == pytest.approx((x, y), abs=1e-9)
    # counter-clockwise: positive shoelace area
    area = 0.5 * np.sum(c[:, 0] * np.roll(c[:, 1], -1) - np.roll(c[:, 0], -1) * c[:, 1])
    assert area == pytest.approx(length * width, rel=1e-9)


@settings(max_examples=200)
@given(finite, finite, heading, size, size, finite, finite, heading, size, size)
def test_overlap_is_symmetric_and_consistent_with_distance(x1, y1, h1, l1, w1, x2, y2, h2, l2, w2):
    a = box_corners(x1, y1, h1, l1, w1)
    b = box_corners(x2, y2, h2, l2, w2)
    ab, ba = bool(boxes_overlap(a, b)), bool(boxes_overlap(b, a))
    assert ab == ba
    d = box_distance(a, b)
    if ab:
        assert d == 0.0
    else:
        assert d > 0.0 or d == pytest.approx(0.0, abs=1e-9)


@given(finite, finite, heading, size, size, finite, finite)
def test_overlap_is_translation_invariant(x, y, h, length, width, tx, ty):
    a = box_corners(x, y, h, length, width)
    b = box_corners(x + 1.0, y + 0.5, h + 0.3, length, width)
    shift = np.array([tx, ty])
    assert bool(boxes_overlap(a, b)) == bool(boxes_overlap(a + shift, b + shift))


def test_overlap_broadcasts_over_batches():
    a = box_corners(np.zeros(3), np.zeros(3), np.zeros(3), 4.0, 2.0)
    b = box_corners(np.array([3.0, 4.1, 0.0]), np.zeros(3), np.array([0.0, 0.0, math.pi / 2]), 4.0, 2.0)
    assert list(boxes_overlap(a, b)) == [True, False, True]


def test_box_distance_axis_aligned_oracle():
    a = box_corners(0, 0, 0, 4, 2)
    b = box_corners(7, 0, 0, 4, 2)
    assert box_distance(a, b) == pytest.approx(3.0)
    c = box_corners(5, 4, 0, 2, 2)  # corner-to-corner
    assert box_distance(a, c) == pytest.approx(math.hypot(2.0, 2.0))


def test_clip_polygon_and_centroid_of_overlap():
    a = box_corners(0, 0, 0, 4, 2)
    b = box_corners(1.5, 0.5, 0, 2, 2)
    poly = np.asarray(clip_polygon(a, b))
    area = 0.5 * abs(np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1]))
    assert area == pytest.approx(1.5 * 1.5)
    assert overlap_centroid(a, b) == pytest.approx((1.25, 0.25))
    assert overlap_centroid(a, box_corners(10, 0, 0, 1, 1)) is None


@given(st.floats(-100, 100))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi <= w <= math.pi
    assert math.sin(w) == pytest.approx(math.sin(a), abs=1e-9)
    assert math.cos(w) == pytest.approx(math.cos(a), abs=1e-9)
