"""Invariant-manifold curves and transport lobes from LD gradient ridges.

Forward descriptors are singular along stable manifolds and backward ones
along unstable manifolds.  Ridges of the gradient magnitude are thinned by
non-maximum suppression, chained into ordered curves, and intersected to
delimit the two lobes that carry trajectories from the upper saddle into
the top and bottom wells.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.path import Path as MplPath
from scipy.spatial import cKDTree

from .descriptors import LDField
from .geometry import (
    centroid,
    polygon_area,
    remove_loops,
    resample,
    ring_arc,
    segment_intersections,
    shoelace,
    sub_polyline,
)

log = logging.getLogger(__name__)

DEFAULT_QUANTILE = 0.97
MIN_CURVE_NODES = 10
LINK_RADIUS = 2
ARC_SAMPLES = 512

# index offsets (d_p, d_y) of the 8-neighbourhood, edge neighbours first
_NEIGHBOURS = ((0, 1), (1, 0), (0, -1), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass
class ManifoldCurve:
    kind: str  # "stable" | "unstable"
    points: np.ndarray  # (n, 2) rows of (y, p_y)
    indices: np.ndarray  # (n, 2) rows of (i_p, i_y)
    closed: bool = False
    source_field: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        pts = self.ring() if self.closed else self.points
        return float(np.hypot(*np.diff(pts, axis=0).T).sum())

    def ring(self) -> np.ndarray:
        return np.vstack([self.points, self.points[:1]])


@dataclass
class LobeRegion:
    label: str  # "top" | "bottom"
    boundary: np.ndarray  # closed polygon, first vertex not repeated
    area: float
    present: bool = True
    intersections: np.ndarray | None = None
    diagnostic: str = ""

    @classmethod
    def absent(cls, label: str, why: str) -> "LobeRegion":
        return cls(label, np.empty((0, 2)), 0.0, present=False, diagnostic=why)

    @property
    def centroid(self) -> np.ndarray:
        return centroid(self.boundary) if self.present else np.full(2, np.nan)


def _derivative(a: np.ndarray, ok: np.ndarray, spacing: float, axis: int) -> np.ndarray:
    """Central difference along ``axis``; one-sided next to masked/edge nodes."""
    a = np.moveaxis(a, axis, 0)
    ok = np.moveaxis(ok, axis, 0)
    n = a.shape[0]
    out = np.zeros_like(a)
    fwd = np.zeros_like(ok)
    bwd = np.zeros_like(ok)
    fwd[:-1] = ok[:-1] & ok[1:]
    bwd[1:] = ok[1:] & ok[:-1]
    both = fwd & bwd
    d_f = np.zeros_like(a)
    d_b = np.zeros_like(a)
    if n > 1:
        d_f[:-1] = (a[1:] - a[:-1]) / spacing
        d_b[1:] = (a[1:] - a[:-1]) / spacing
    out = np.where(both, 0.5 * (d_f + d_b), np.where(fwd, d_f, np.where(bwd, d_b, 0.0)))
    out = np.where(ok, out, np.nan)
    return np.moveaxis(out, 0, axis)


def field_gradient(values: np.ndarray, mask: np.ndarray, dy: float, dp: float):
    """(d/dy, d/dp_y) of a section field; NaN off the mask."""
    ok = mask & np.isfinite(values)
    vals = np.where(ok, values, 0.0)
    return _derivative(vals, ok, dy, axis=1), _derivative(vals, ok, dp, axis=0)


def gradient_magnitude(ld: LDField, part: str = "total") -> np.ndarray:
    gy, gp = field_gradient(ld.part(part), ld.mask, ld.section.dy, ld.section.dp)
    return np.hypot(gy, gp)


def _nms(G: np.ndarray, gy: np.ndarray, gp: np.ndarray, cand: np.ndarray, dy: float, dp: float):
    """Keep candidates that are maximal across the local gradient direction."""
    # gradient per grid index, then quantised to one of four axes
    ang = np.nan_to_num(np.arctan2(gp * dp, gy * dy))
    sector = (np.round(ang / (np.pi / 4)).astype(int)) % 4
    steps = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}  # (d_p, d_y)
    Gp = np.pad(np.where(np.isfinite(G), G, -np.inf), 1, constant_values=-np.inf)
    n_p, n_y = G.shape
    keep = np.zeros_like(cand)
    jj, ii = np.nonzero(cand)
    for s, (sp, sy) in steps.items():
        sel = sector[jj, ii] == s
        j, i = jj[sel], ii[sel]
        centre = G[j, i]
        ahead = Gp[j + 1 + sp, i + 1 + sy]
        behind = Gp[j + 1 - sp, i + 1 - sy]
        # strict on one side so a plateau of two equal nodes keeps exactly one
        ok = (centre > ahead) & (centre >= behind)
        keep[j[ok], i[ok]] = True
    return keep


def _chain(ridge: np.ndarray) -> list[np.ndarray]:
    """Order 8-connected ridge nodes into index paths."""
    n_p, n_y = ridge.shape
    remaining = ridge.copy()

    def nbrs(j, i):
        for dj, di in _NEIGHBOURS:
            a, b = j + dj, i + di
            if 0 <= a < n_p and 0 <= b < n_y and remaining[a, b]:
                yield a, b

    def walk(start, prev=None):
        path = []
        cur = start
        while True:
            options = list(nbrs(*cur))
            if not options:
                return path
            if prev is not None:
                d0 = (cur[0] - prev[0], cur[1] - prev[1])
                options.sort(key=lambda q: -((q[0] - cur[0]) * d0[0] + (q[1] - cur[1]) * d0[1]))
            nxt = options[0]
            remaining[nxt] = False
            path.append(nxt)
            prev, cur = cur, nxt

    paths = []
    nodes = list(zip(*np.nonzero(ridge)))
    degree = {q: 0 for q in nodes}
    for q in nodes:
        degree[q] = sum(1 for _ in nbrs(*q))
    # endpoints first, then everything else, in deterministic grid order
    order = sorted(nodes, key=lambda q: (degree[q] > 1, q))
    for start in order:
        if not remaining[start]:
            continue
        remaining[start] = False
        ahead = walk(start)
        behind = walk(start)
        path = behind[::-1] + [start] + ahead
        paths.append(np.array(path, dtype=int))
    return paths


def _link(paths: list[np.ndarray], radius: int) -> list[np.ndarray]:
    """Join paths whose endpoints lie within ``radius`` cells (Chebyshev).

    Endpoint pairs are matched greedily by distance; each endpoint is used
    at most once and no path is joined to itself.
    """
    n = len(paths)
    if n < 2:
        return list(paths)
    ends = np.array([[p[0], p[-1]] for p in paths]).reshape(2 * n, 2)
    d = np.max(np.abs(ends[:, None, :] - ends[None, :, :]), axis=2)
    owner = np.arange(2 * n) // 2
    ia, ib = np.nonzero((d <= radius) & (owner[:, None] < owner[None, :]))
    order = np.lexsort((ib, ia, d[ia, ib]))
    partner = -np.ones(2 * n, dtype=int)
    group = list(range(n))  # union-find over paths

    def root(k):
        while group[k] != k:
            group[k] = group[group[k]]
            k = group[k]
        return k

    for k in order:
        a, b = ia[k], ib[k]
        if partner[a] >= 0 or partner[b] >= 0:
            continue
        ra, rb = root(owner[a]), root(owner[b])
        if ra == rb:
            continue
        partner[a], partner[b] = b, a
        group[ra] = rb

    out = []
    seen = np.zeros(n, dtype=bool)
    # start from a path end that has no partner; chains are then walked end to end
    for start_end in range(2 * n):
        if seen[owner[start_end]] or partner[start_end] >= 0:
            continue
        pieces = []
        e = start_end
        while True:
            pid = owner[e]
            seen[pid] = True
            p = paths[pid]
            pieces.append(p if e % 2 == 0 else p[::-1])
            exit_end = e ^ 1
            nxt = partner[exit_end]
            if nxt < 0:
                break
            e = nxt
        out.append(np.vstack(pieces))
    for pid in range(n):
        if not seen[pid]:
            out.append(paths[pid])
    return out


def ridge_nodes(ld: LDField, part: str, quantile: float) -> np.ndarray:
    """Boolean map of thinned ridge nodes above the gradient-magnitude quantile."""
    vals = ld.part(part)
    gy, gp = field_gradient(vals, ld.mask, ld.section.dy, ld.section.dp)
    G = np.hypot(gy, gp)
    finite = np.isfinite(G)
    if not finite.any():
        return np.zeros_like(ld.mask)
    thr = np.quantile(G[finite], quantile)
    cand = finite & (G > thr)
    return _nms(G, gy, gp, cand, ld.section.dy, ld.section.dp)


def curves_from_ridges(
    ridge: np.ndarray, kind: str, ld: LDField, min_nodes: int = MIN_CURVE_NODES,
    link_radius: int = LINK_RADIUS,
) -> list[ManifoldCurve]:
    ys, ps = ld.section.ys, ld.section.p_ys
    meta = {"c": ld.params.c, "tau": ld.tau, "H0": ld.params.H0}
    curves = []
    for path in _link(_chain(ridge), link_radius):
        if len(path) < min_nodes:
            continue
        closed = len(path) > 2 * link_radius + 2 and int(np.max(np.abs(path[0] - path[-1]))) <= link_radius
        pts = np.column_stack([ys[path[:, 1]], ps[path[:, 0]]])
        curves.append(ManifoldCurve(kind, pts, path, closed, dict(meta)))
    curves.sort(key=lambda cv: (-len(cv), tuple(cv.indices[0])))
    return curves


def extract_manifolds(
    ld: LDField, quantile: float = DEFAULT_QUANTILE, min_nodes: int = MIN_CURVE_NODES
) -> list[ManifoldCurve]:
    """Stable curves from the forward part, unstable from the backward part.

    Returns an empty list (and logs why) when nothing clears the threshold.
    """
    if not 0 < quantile < 1:
        raise ValueError("quantile must lie in (0, 1)")
    out = []
    for kind, part in (("stable", "forward"), ("unstable", "backward")):
        ridge = ridge_nodes(ld, part, quantile)
        if not ridge.any():
            log.warning("no %s-manifold ridge nodes above the %.3f quantile", kind, quantile)
            continue
        for cv in curves_from_ridges(ridge, kind, ld, min_nodes):
            cv.source_field["quantile"] = quantile
            out.append(cv)
    if not out:
        log.warning("extract_manifolds: empty result for c=%s", ld.params.c)
    return out


def upper_saddle_ring(
    unstable: list[ManifoldCurve], max_gap: float = 0.15, shadow: float = 0.04
) -> np.ndarray:
    """Close the upper-saddle unstable manifold into a ring.

    Starts from the longest unstable curve and repeatedly appends the curve
    whose endpoint is nearest the open end, bridging gaps shorter than
    ``max_gap`` (section units) with straight chords, until closing the ring
    is the shortest remaining step.  Fragments whose median distance to the
    ring is below ``shadow`` are outer folds running alongside it and are
    never appended.
    """
    if not unstable:
        raise ValueError("no unstable curves")
    curves = sorted(unstable, key=lambda cv: -cv.length)
    ring = curves[0].points.copy()
    if curves[0].closed:
        return remove_loops(ring, closed=True)
    used = {0}
    while True:
        best = None
        tree = cKDTree(ring)
        for k, cv in enumerate(curves):
            if k in used:
                continue
            if np.median(tree.query(cv.points)[0]) < shadow:
                # a parallel fold lying alongside the ring, not a continuation
                continue
            for pts in (cv.points, cv.points[::-1]):
                d = float(np.hypot(*(pts[0] - ring[-1])))
                if best is None or d < best[0]:
                    best = (d, k, pts)
        closing = float(np.hypot(*(ring[0] - ring[-1])))
        if best is None or best[0] >= closing or best[0] > max_gap:
            break
        ring = np.vstack([ring, best[2]])
        used.add(best[1])
    return remove_loops(ring, closed=True)


@dataclass
class _Cut:
    """A stable-curve arc spanning the ring interior, and the two pieces it makes."""

    arc: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    upper_arc: np.ndarray  # ring arc closing the upper piece
    lower_arc: np.ndarray
    points: np.ndarray  # the two heteroclinic intersection points
    upper_area: float
    lower_area: float


def _cuts(stable: list[ManifoldCurve], ring: np.ndarray, min_fraction: float = 0.01) -> list[_Cut]:
    closed = np.vstack([ring, ring[:1]])
    ring_path = MplPath(closed)
    n = len(ring)
    total = shoelace(ring)
    out = []
    for cv in stable:
        hits = segment_intersections(cv.points, closed)
        for k in range(len(hits) - 1):
            a, b = hits[k], hits[k + 1]
            arc = remove_loops(sub_polyline(cv.points, a[2], b[2]), closed=False)
            if len(arc) < 3 or not ring_path.contains_point(arc[len(arc) // 2]):
                continue
            arc_1 = ring_arc(ring, b[3] % n, a[3] % n)
            arc_2 = ring_arc(ring, a[3] % n, b[3] % n)
            piece_1 = np.vstack([arc, arc_1[1:-1]])
            piece_2 = np.vstack([arc[::-1], arc_2[1:-1]])
            a1, a2 = shoelace(piece_1), shoelace(piece_2)
            if min(a1, a2) < min_fraction * total:
                continue
            if centroid(piece_1)[1] >= centroid(piece_2)[1]:
                up, lo, ua, la, au, al = piece_1, piece_2, arc_1, arc_2, a1, a2
            else:
                up, lo, ua, la, au, al = piece_2, piece_1, arc_2, arc_1, a2, a1
            out.append(_Cut(arc, up, lo, ua, la, np.array([a[:2], b[:2]]), au, al))
    out.sort(key=lambda ct: -ct.upper_area)
    return out


def _lobe(label: str, arc: np.ndarray, ring_piece: np.ndarray, points, n_samples: int) -> LobeRegion:
    # arc runs between the intersection points; ring_piece closes it
    a = resample(arc, n_samples)
    r = resample(ring_piece, n_samples)
    if np.hypot(*(a[-1] - r[0])) > np.hypot(*(a[-1] - r[-1])):
        r = r[::-1]
    boundary = remove_loops(np.vstack([a, r[1:-1]]), closed=True)
    return LobeRegion(label, boundary, polygon_area(boundary), intersections=np.asarray(points))


def identify_lobes(
    stable: list[ManifoldCurve],
    unstable: list[ManifoldCurve],
    ld: LDField,
    n_samples: int = ARC_SAMPLES,
) -> tuple[LobeRegion, LobeRegion]:
    """Top and bottom transport lobes on the section.

    Every stable arc that crosses the upper-saddle unstable ring between
    two consecutive intersection points cuts the ring interior in two.  The
    cuts are ordered from bottom to top; the strip between neighbouring
    cuts with the smallest mean forward descriptor is the reflection band
    (trajectories bouncing straight back out of the saddle region leave the
    domain first).  The top lobe lies above the band's upper cut, the bottom
    lobe below its lower cut.
    """
    if not stable or not unstable:
        why = "empty curve set"
        return LobeRegion.absent("top", why), LobeRegion.absent("bottom", why)
    ring = upper_saddle_ring(unstable)
    cuts = _cuts(stable, ring)
    if len(cuts) < 2:
        why = f"{len(cuts)} stable arcs cross the upper-saddle ring; need 2"
        log.warning("identify_lobes (c=%s): %s", ld.params.c, why)
        return LobeRegion.absent("top", why), LobeRegion.absent("bottom", why)

    Y, P = np.meshgrid(ld.section.ys, ld.section.p_ys, indexing="xy")
    ok = ld.mask & np.isfinite(ld.values_forward)
    nodes = np.column_stack([Y[ok], P[ok]])
    fwd = ld.values_forward[ok]
    inside = [MplPath(np.vstack([ct.upper, ct.upper[:1]])).contains_points(nodes) for ct in cuts]
    best = None
    for k in range(len(cuts) - 1):
        strip = inside[k] & ~inside[k + 1]
        if strip.sum() < 3:
            continue
        score = float(fwd[strip].mean())
        if best is None or score < best[0]:
            best = (score, k)
    if best is None:
        why = "no strip between stable cuts contains grid nodes"
        return LobeRegion.absent("top", why), LobeRegion.absent("bottom", why)
    k = best[1]
    upper_cut, lower_cut = cuts[k + 1], cuts[k]
    top = _lobe("top", upper_cut.arc, upper_cut.upper_arc, upper_cut.points, n_samples)
    bottom = _lobe("bottom", lower_cut.arc, lower_cut.lower_arc, lower_cut.points, n_samples)
    return top, bottom


def lobe_summary(
    curves: list[ManifoldCurve], top: LobeRegion, bottom: LobeRegion, ld: LDField,
    quantile: float = DEFAULT_QUANTILE,
) -> dict:
    """Areas, intersection counts and thresholds as a JSON-ready dict."""

    def lobe(lb: LobeRegion):
        return {
            "present": lb.present,
            "area": lb.area,
            "n_intersections": 0 if lb.intersections is None else len(lb.intersections),
            "intersections": [] if lb.intersections is None else np.asarray(lb.intersections).tolist(),
            "centroid": lb.centroid.tolist() if lb.present else None,
            "diagnostic": lb.diagnostic,
        }

    return {
        "c": ld.params.c,
        "H0": ld.params.H0,
        "tau": ld.tau,
        "grid": [ld.section.n_y, ld.section.n_p],
        "quantile": quantile,
        "n_stable_curves": sum(cv.kind == "stable" for cv in curves),
        "n_unstable_curves": sum(cv.kind == "unstable" for cv in curves),
        "top": lobe(top),
        "bottom": lobe(bottom),
        "area_difference": bottom.area - top.area,
    }


CURVE_CSV_HEADER = ("kind", "curve", "vertex", "y", "p_y")
LOBE_CSV_HEADER = ("label", "vertex", "y", "p_y")


def write_curves_csv(curves: list[ManifoldCurve], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_CSV_HEADER)
        for k, cv in enumerate(curves):
            for i, (y, p) in enumerate(cv.points):
                w.writerow((cv.kind, k, i, repr(float(y)), repr(float(p))))
    return path


def write_lobes_csv(lobes: list[LobeRegion], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOBE_CSV_HEADER)
        for lb in lobes:
            for i, (y, p) in enumerate(lb.boundary):
                w.writerow((lb.label, i, repr(float(y)), repr(float(p))))
    return path


def write_summary(summary: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
