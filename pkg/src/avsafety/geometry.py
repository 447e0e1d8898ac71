"""Planar geometry: polylines and oriented rectangles.

Headings are radians counter-clockwise from +x. Lateral offsets are positive to
the left of the direction of travel.
"""

from __future__ import annotations

import bisect
import math

import numpy as np


class Polyline:
    """Piecewise-linear curve with arc-length parameterization."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two 2-D points")
        seg = np.diff(pts, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        keep = np.concatenate([[True], seglen > 1e-12])
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("polyline has zero length")
        seg = np.diff(pts, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        self.points = pts
        self.seg = seg
        self.seglen = seglen
        self.cum = np.concatenate([[0.0], np.cumsum(seglen)])
        self.headings = np.arctan2(seg[:, 1], seg[:, 0])
        self.length = float(self.cum[-1])
        # plain-float copies for the scalar hot path
        self._cum = self.cum.tolist()
        self._pts = pts.tolist()
        self._dir = (seg / seglen[:, None]).tolist()
        self._hdg = self.headings.tolist()

    def _segment(self, s: float) -> int:
        i = bisect.bisect_right(self._cum, s) - 1
        return min(max(i, 0), len(self._dir) - 1)

    def pose(self, s: float, offset: float = 0.0) -> tuple[float, float, float]:
        """(x, y, heading) at arc ``s`` shifted ``offset`` to the left."""
        i = self._segment(s)
        ds = s - self._cum[i]
        px, py = self._pts[i]
        dx, dy = self._dir[i]
        return (px + dx * ds - dy * offset, py + dy * ds + dx * offset, self._hdg[i])

    def project(self, point) -> tuple[float, float]:
        """Closest arc position and signed lateral offset of ``point``."""
        p = np.asarray(point, dtype=float)
        rel = p - self.points[:-1]
        t = np.clip(np.einsum("ij,ij->i", rel, self.seg) / self.seglen**2, 0.0, 1.0)
        foot = self.points[:-1] + t[:, None] * self.seg
        d2 = np.sum((p - foot) ** 2, axis=1)
        i = int(np.argmin(d2))
        s = float(self.cum[i] + t[i] * self.seglen[i])
        dx, dy = self.seg[i] / self.seglen[i]
        rx, ry = p - foot[i]
        # sign from the segment normal; at the clamped ends this is the
        # perpendicular component only, the along-track excess is dropped
        lat = float(-dy * rx + dx * ry)
        return s, lat

    def poses(self, s, offset=0.0):
        """Vectorized :meth:`pose` over an array of arc positions."""
        s = np.asarray(s, dtype=float)
        i = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.seglen) - 1)
        ds = s - self.cum[i]
        d = self.seg[i] / self.seglen[i][..., None]
        base = self.points[i]
        off = np.asarray(offset, dtype=float)
        x = base[..., 0] + d[..., 0] * ds - d[..., 1] * off
        y = base[..., 1] + d[..., 1] * ds + d[..., 0] * off
        return x, y, self.headings[i]


def concat_polylines(polylines) -> Polyline:
    pts = [polylines[0].points]
    for pl in polylines[1:]:
        pts.append(pl.points)
    return Polyline(np.concatenate(pts, axis=0))


def arc_points(center, radius, start, end, n=None):
    """Points on a circular arc from angle ``start`` to ``end`` (radians)."""
    if n is None:
        n = max(4, int(abs(end - start) * radius / 1.0) + 1)
    a = np.linspace(start, end, n)
    return np.stack([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)], axis=1)


def box_corners(x, y, heading, length, width):
    """Corners of an oriented rectangle, counter-clockwise. Broadcasts."""
    x, y, h = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(heading, float))
    c, s = np.cos(h), np.sin(h)
    hl = np.asarray(length, float) / 2.0
    hw = np.asarray(width, float) / 2.0
    local = ((hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw))
    out = np.empty(x.shape + (4, 2))
    for k, (lx, ly) in enumerate(local):
        out[..., k, 0] = x + c * lx - s * ly
        out[..., k, 1] = y + s * lx + c * ly
    return out


def _axes(corners):
    e1 = corners[..., 1, :] - corners[..., 0, :]
    e2 = corners[..., 3, :] - corners[..., 0, :]
    return e1, e2


def boxes_overlap(a, b):
    """Separating-axis test for rectangles given as ``(..., 4, 2)`` corners.

    Touching boxes (zero-area contact) are not an overlap.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    a, b = np.broadcast_arrays(a, b)
    result = np.ones(a.shape[:-2], dtype=bool)
    for axis in (*_axes(a), *_axes(b)):
        pa = np.einsum("...kj,...j->...k", a, axis)
        pb = np.einsum("...kj,...j->...k", b, axis)
        sep = (pa.max(-1) <= pb.min(-1)) | (pb.max(-1) <= pa.min(-1))
        result &= ~sep
    return result if result.shape else bool(result)


def _seg_point_dist(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
    return float(np.hypot(*(p - (a + t * ab))))


def box_distance(a, b) -> float:
    """Closest distance between two rectangles (0 when they overlap)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if boxes_overlap(a, b):
        return 0.0
    best = math.inf
    for P, Q in ((a, b), (b, a)):
        for p in P:
            for k in range(4):
                best = min(best, _seg_point_dist(p, Q[k], Q[(k + 1) % 4]))
    return best


def clip_polygon(subject, clip):
    """Sutherland-Hodgman clip of a polygon by a convex counter-clockwise one."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for k in range(n):
        ax, ay = clip[k]
        bx, by = clip[(k + 1) % n]
        inp, out = out, []
        if not inp:
            break

        def inside(p):
            return (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax) >= 0.0

        def cross(p, q):
            x1, y1 = p
            x2, y2 = q
            den = (x1 - x2) * (ay - by) - (y1 - y2) * (ax - bx)
            t = ((x1 - ax) * (ay - by) - (y1 - ay) * (ax - bx)) / den
            return (x1 + t * (x2 - x1), y1 + t * (y2 - y1))

        prev = inp[-1]
        for cur in inp:
            if inside(cur):
                if not inside(prev):
                    out.append(cross(prev, cur))
                out.append(cur)
            elif inside(prev):
                out.append(cross(prev, cur))
            prev = cur
    return out


def overlap_centroid(a, b):
    """Centroid of the intersection of two rectangles, or None."""
    poly = clip_polygon(np.asarray(a, float), np.asarray(b, float))
    if len(poly) < 3:
        return None
    p = np.asarray(poly)
    x, y = p[:, 0], p[:, 1]
    xs, ys = np.roll(x, -1), np.roll(y, -1)
    cr = x * ys - xs * y
    area = cr.sum() / 2.0
    if abs(area) < 1e-15:
        return (float(x.mean()), float(y.mean()))
    return (float(((x + xs) * cr).sum() / (6 * area)), float(((y + ys) * cr).sum() / (6 * area)))


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi
