"""Planar polyline/polygon helpers used for lobe construction."""

from __future__ import annotations

import numpy as np


class SelfIntersectionError(ValueError):
    pass


def _as_points(poly) -> np.ndarray:
    pts = np.asarray(poly, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("expected an (n, 2) array of vertices")
    return pts


def _open_ring(pts: np.ndarray) -> np.ndarray:
    if len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
        return pts[:-1]
    return pts


def segment_intersections(a, b, chunk: int = 256):
    """All proper intersections between polylines ``a`` and ``b``.

    Returns an (k, 5) array with rows (x, y, sa, sb, _) where ``sa``/``sb``
    are fractional vertex positions along ``a``/``b`` (segment index plus
    the local parameter).  Rows are sorted by ``sa``.
    """
    a = _as_points(a)
    b = _as_points(b)
    if len(a) < 2 or len(b) < 2:
        return np.empty((0, 5))
    b0 = b[:-1]
    db = b[1:] - b0
    bmin = np.minimum(b[:-1], b[1:])
    bmax = np.maximum(b[:-1], b[1:])
    rows = []
    for lo in range(0, len(a) - 1, chunk):
        a0 = a[lo : min(lo + chunk, len(a) - 1)]
        da = a[lo + 1 : lo + 1 + len(a0)] - a0
        amin = np.minimum(a0, a0 + da)
        amax = np.maximum(a0, a0 + da)
        near = (
            (amin[:, None, 0] <= bmax[None, :, 0])
            & (amax[:, None, 0] >= bmin[None, :, 0])
            & (amin[:, None, 1] <= bmax[None, :, 1])
            & (amax[:, None, 1] >= bmin[None, :, 1])
        )
        ia, ib = np.nonzero(near)
        if ia.size == 0:
            continue
        p, r = a0[ia], da[ia]
        q, s = b0[ib], db[ib]
        denom = r[:, 0] * s[:, 1] - r[:, 1] * s[:, 0]
        qp = q - p
        ok = np.abs(denom) > 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / denom
            u = (qp[:, 0] * r[:, 1] - qp[:, 1] * r[:, 0]) / denom
        # half-open on the far end so shared vertices are counted once
        hit = ok & (t >= 0) & (t < 1) & (u >= 0) & (u < 1)
        for k in np.flatnonzero(hit):
            pt = p[k] + t[k] * r[k]
            rows.append((pt[0], pt[1], lo + ia[k] + t[k], ib[k] + u[k], 0.0))
    if not rows:
        return np.empty((0, 5))
    out = np.array(rows)
    return out[np.argsort(out[:, 2], kind="stable")]


def is_simple(poly) -> bool:
    """True when no two non-adjacent edges of the closed polygon intersect."""
    pts = _open_ring(_as_points(poly))
    n = len(pts)
    if n < 3:
        return False
    p = pts
    r = np.roll(pts, -1, axis=0) - pts
    for lo in range(0, n, 256):
        idx = np.arange(lo, min(lo + 256, n))
        P, R = p[idx], r[idx]
        denom = R[:, None, 0] * r[None, :, 1] - R[:, None, 1] * r[None, :, 0]
        qp = p[None, :, :] - P[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[..., 0] * r[None, :, 1] - qp[..., 1] * r[None, :, 0]) / denom
            u = (qp[..., 0] * R[:, None, 1] - qp[..., 1] * R[:, None, 0]) / denom
        hit = (np.abs(denom) > 1e-300) & (t > 0) & (t < 1) & (u > 0) & (u < 1)
        j = np.arange(n)[None, :]
        i = idx[:, None]
        adjacent = (j == i) | (j == (i + 1) % n) | (j == (i - 1) % n)
        if np.any(hit & ~adjacent):
            return False
    return True


def shoelace(poly) -> float:
    pts = _open_ring(_as_points(poly))
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polygon_area(boundary) -> float:
    """Absolute shoelace area of a closed simple polygon.

    The closing edge is implied; a repeated first vertex is accepted.
    Self-intersecting input raises :class:`SelfIntersectionError`.
    """
    pts = _open_ring(_as_points(boundary))
    if len(pts) < 3:
        raise ValueError("a polygon needs at least 3 vertices")
    if not is_simple(pts):
        raise SelfIntersectionError("polygon boundary intersects itself")
    return shoelace(pts)


def centroid(poly) -> np.ndarray:
    pts = _open_ring(_as_points(poly))
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    if a == 0:
        return pts.mean(axis=0)
    return np.array([((x + xn) * cross).sum() / (6 * a), ((y + yn) * cross).sum() / (6 * a)])


def resample(arc, n: int) -> np.ndarray:
    """``n`` points equally spaced in arclength along an open polyline."""
    arc = _as_points(arc)
    seg = np.hypot(*np.diff(arc, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.repeat(arc[:1], n, axis=0)
    t = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(t, s, arc[:, 0]), np.interp(t, s, arc[:, 1])])


def sub_polyline(pts: np.ndarray, s0: float, s1: float) -> np.ndarray:
    """Piece of an open polyline between fractional positions s0 < s1."""
    i0 = int(np.floor(s0))
    i1 = int(np.floor(s1))

    def at(s):
        i = min(int(np.floor(s)), len(pts) - 2)
        t = s - i
        return pts[i] + t * (pts[i + 1] - pts[i])

    mid = pts[i0 + 1 : i1 + 1]
    return np.vstack([at(s0), mid, at(s1)])


def ring_arc(ring: np.ndarray, s0: float, s1: float) -> np.ndarray:
    """Arc of a closed ring (first vertex not repeated) from s0 forward to s1, wrapping."""
    n = len(ring)
    closed = np.vstack([ring, ring[:1]])
    if s1 >= s0:
        return sub_polyline(closed, s0, s1)
    first = sub_polyline(closed, s0, float(n))
    second = sub_polyline(closed, 0.0, s1)
    return np.vstack([first, second[1:]])


def _self_hits(pts: np.ndarray, closed: bool) -> np.ndarray:
    line = np.vstack([pts, pts[:1]]) if closed else pts
    hits = segment_intersections(line, line)
    if len(hits) == 0:
        return hits
    n_seg = len(line) - 1
    ia = np.floor(hits[:, 2])
    ib = np.floor(hits[:, 3])
    gap = np.abs(ia - ib)
    if closed:
        gap = np.minimum(gap, n_seg - gap)
    keep = (gap > 1) & (hits[:, 2] < hits[:, 3])
    return hits[keep]


def remove_loops(pts, closed: bool = True, max_iter: int = 10_000) -> np.ndarray:
    """Cut out small self-intersection loops from a traced polyline or ring.

    At each crossing the side with fewer vertices is replaced by the
    crossing point.  Ridge tracing on a grid leaves such loops where
    fragments overlap; they carry no geometry of interest.
    """
    pts = _open_ring(_as_points(pts)) if closed else _as_points(pts)
    for _ in range(max_iter):
        hits = _self_hits(pts, closed)
        if len(hits) == 0:
            return pts
        x, y, sa, sb, _ = hits[0]
        i, j = int(np.floor(sa)), int(np.floor(sb))
        inner = j - i
        outer = len(pts) - inner
        cross = np.array([[x, y]])
        if not closed or inner <= outer:
            pts = np.vstack([pts[: i + 1], cross, pts[j + 1 :]])
        else:
            pts = np.vstack([cross, pts[i + 1 : j + 1]])
    raise RuntimeError("remove_loops did not converge")
