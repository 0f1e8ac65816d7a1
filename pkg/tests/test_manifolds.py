import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vri.descriptors import LDField, SectionSpec
from vri.geometry import (
    SelfIntersectionError,
    is_simple,
    remove_loops,
    resample,
    segment_intersections,
    shoelace,
)
from vri.manifolds import (
    DEFAULT_QUANTILE,
    extract_manifolds,
    gradient_magnitude,
    identify_lobes,
    lobe_summary,
    polygon_area,
    write_curves_csv,
    write_lobes_csv,
    write_summary,
)
from vri.potential import SystemParams

from conftest import LOBE_C_VALUES


def synthetic(values_fn, n_y=101, n_p=81, mask_fn=None):
    sec = SectionSpec(n_y=n_y, n_p=n_p)
    Y, P = np.meshgrid(sec.ys, sec.p_ys, indexing="xy")
    v = values_fn(Y, P).astype(float)
    mask = np.ones_like(v, dtype=bool) if mask_fn is None else mask_fn(Y, P)
    v = np.where(mask, v, np.nan)
    zero = np.zeros_like(mask)
    return LDField(sec, SystemParams(), 8.0, 0.5, v, v.copy(), 2 * v, mask, zero, zero.copy())


def lobes_at(ld, quantile=DEFAULT_QUANTILE):
    curves = extract_manifolds(ld, quantile)
    stable = [cv for cv in curves if cv.kind == "stable"]
    unstable = [cv for cv in curves if cv.kind == "unstable"]
    return curves, identify_lobes(stable, unstable, ld)


class TestPolygonArea:
    def test_unit_square(self):
        assert polygon_area([(0, 0), (1, 0), (1, 1), (0, 1)]) == 1.0

    def test_triangle(self):
        assert polygon_area([(0, 0), (1, 0), (0, 1)]) == 0.5

    def test_orientation_and_closure(self):
        sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
        assert polygon_area(sq[::-1]) == 1.0
        assert polygon_area(sq + [sq[0]]) == 1.0

    def test_self_intersection_rejected(self):
        with pytest.raises(SelfIntersectionError):
            polygon_area([(0, 0), (1, 1), (1, 0), (0, 1)])

    def test_too_few_vertices(self):
        with pytest.raises(ValueError):
            polygon_area([(0, 0), (1, 0)])


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 40), st.integers(0, 39), st.floats(0.1, 5.0))
def test_area_invariant_under_rotation_and_reversal(n, shift, r):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    poly = np.column_stack([r * np.cos(t), 0.5 * r * np.sin(t)])
    a = polygon_area(poly)
    assert polygon_area(np.roll(poly, shift % n, axis=0)) == pytest.approx(a, rel=1e-12)
    assert polygon_area(poly[::-1]) == pytest.approx(a, rel=1e-12)


class TestGeometry:
    def test_segment_intersections(self):
        a = np.array([[0, 0], [2, 2]], float)
        b = np.array([[0, 2], [2, 0]], float)
        hits = segment_intersections(a, b)
        assert len(hits) == 1
        np.testing.assert_allclose(hits[0, :4], [1, 1, 0.5, 0.5])

    def test_remove_loops(self):
        ring = np.array([[0, 0], [4, 0], [4, 4], [2, 4], [2, 5], [3, 5], [3, 3], [0, 4]], float)
        assert not is_simple(ring)
        clean = remove_loops(ring)
        assert is_simple(clean)
        assert shoelace(clean) > 14

    def test_resample_even_spacing(self):
        arc = resample(np.array([[0, 0], [1, 0], [1, 1]], float), 21)
        seg = np.hypot(*np.diff(arc, axis=0).T)
        np.testing.assert_allclose(seg, 0.1, atol=1e-12)


class TestGradientMagnitude:
    def test_constant_field(self):
        ld = synthetic(lambda Y, P: np.full_like(Y, 3.0))
        assert np.all(gradient_magnitude(ld) == 0)

    def test_linear_field(self):
        ld = synthetic(lambda Y, P: Y)
        G = gradient_magnitude(ld, "forward")
        np.testing.assert_allclose(G, 1.0, atol=1e-12)

    def test_linear_field_with_hole(self):
        ld = synthetic(lambda Y, P: Y, mask_fn=lambda Y, P: Y**2 + P**2 > 0.05)
        G = gradient_magnitude(ld, "forward")
        np.testing.assert_allclose(G[ld.mask], 1.0, atol=1e-12)
        assert np.all(np.isnan(G[~ld.mask]))

    def test_rejects_unknown_part(self):
        with pytest.raises(ValueError):
            gradient_magnitude(synthetic(lambda Y, P: Y), "sideways")


class TestExtraction:
    def test_step_gives_one_curve_on_the_line(self):
        y0 = 0.3
        ld = synthetic(lambda Y, P: (Y > y0).astype(float))
        curves = [cv for cv in extract_manifolds(ld) if cv.kind == "stable"]
        assert len(curves) == 1
        assert np.max(np.abs(curves[0].points[:, 0] - y0)) <= ld.section.dy

    def test_empty_result(self, caplog):
        ld = synthetic(lambda Y, P: np.zeros_like(Y))
        assert extract_manifolds(ld) == []
        assert "empty" in caplog.text or "no stable" in caplog.text

    def test_rejects_bad_quantile(self):
        with pytest.raises(ValueError):
            extract_manifolds(synthetic(lambda Y, P: Y), 1.0)


@pytest.mark.slow
class TestFullResolution:
    def test_gradient_symmetric_when_symmetric(self, full_field):
        G = gradient_magnitude(full_field(0.0), "total")
        ok = np.isfinite(G) & np.isfinite(G[::-1, ::-1])
        assert np.max(np.abs(G - G[::-1, ::-1])[ok]) < 1e-5

    def test_stable_set_maps_to_itself_when_symmetric(self, full_field):
        # the few unmatched nodes sit at curve ends, where the 10-node minimum
        # keeps a fragment on one side and drops its mirror image
        ld = full_field(0.0)
        n_p, n_y = ld.mask.shape
        for kind in ("stable", "unstable"):
            idx = np.vstack([cv.indices for cv in extract_manifolds(ld) if cv.kind == kind])
            mirror = np.column_stack([n_p - 1 - idx[:, 0], n_y - 1 - idx[:, 1]])
            occupied = set(map(tuple, idx))
            near = 0
            for j, i in mirror:
                near += any(
                    (j + a, i + b) in occupied for a in range(-2, 3) for b in range(-2, 3)
                )
            assert near / len(mirror) > 0.98, (kind, near / len(mirror))

    def test_curve_invariants(self, full_field):
        ld = full_field(0.2)
        G = {k: gradient_magnitude(ld, p) for k, p in (("stable", "forward"), ("unstable", "backward"))}
        for cv in extract_manifolds(ld):
            g = G[cv.kind]
            thr = np.quantile(g[np.isfinite(g)], DEFAULT_QUANTILE)
            assert np.all(g[cv.indices[:, 0], cv.indices[:, 1]] > thr)
            assert np.all(np.abs(np.diff(cv.indices, axis=0)).max(axis=1) <= 2)
            assert np.all(ld.mask[cv.indices[:, 0], cv.indices[:, 1]])
            assert len(cv) >= 10

    def test_lobes_equal_when_symmetric(self, full_field):
        _, (top, bottom) = lobes_at(full_field(0.0))
        assert top.present and bottom.present
        assert abs(top.area - bottom.area) / top.area < 0.05
        assert bottom.area == pytest.approx(0.2993, abs=0.03)
        assert top.centroid[1] > 0 > bottom.centroid[1]

    def test_bottom_lobe_c03(self, full_field):
        _, (top, bottom) = lobes_at(full_field(0.3))
        assert bottom.area == pytest.approx(0.2629 * 0.3 + 0.2993, abs=0.03)

    def test_lobe_structure_persists_at_c04(self, full_field):
        curves, (top, bottom) = lobes_at(full_field(0.4))
        assert sum(cv.kind == "stable" for cv in curves) >= 2
        assert sum(cv.kind == "unstable" for cv in curves) >= 1
        assert top.present and bottom.present
        for lb in (top, bottom):
            assert lb.area > 0 and is_simple(lb.boundary)
            assert len(lb.intersections) == 2

    def test_area_difference_grows(self, full_field):
        diffs = []
        for c in LOBE_C_VALUES:
            _, (top, bottom) = lobes_at(full_field(c))
            diffs.append(bottom.area - top.area)
        assert np.all(np.diff(diffs) > 0), diffs

    def test_exports(self, full_field, tmp_path):
        ld = full_field(0.1)
        curves, (top, bottom) = lobes_at(ld)
        p1 = write_curves_csv(curves, tmp_path / "curves.csv")
        p2 = write_lobes_csv([top, bottom], tmp_path / "lobes.csv")
        p3 = write_summary(lobe_summary(curves, top, bottom, ld), tmp_path / "lobes.json")
        assert p1.read_text().splitlines()[0] == "kind,curve,vertex,y,p_y"
        rows = p2.read_text().splitlines()
        assert rows[0] == "label,vertex,y,p_y" and len(rows) == 1 + len(top.boundary) + len(bottom.boundary)
        s = json.loads(p3.read_text())
        assert s["top"]["area"] == top.area and s["quantile"] == DEFAULT_QUANTILE
        assert s["top"]["n_intersections"] == 2


def test_absent_lobes_reported():
    # a single straight ridge cannot close any lobe
    ld = synthetic(lambda Y, P: (Y > 0.1).astype(float))
    curves, (top, bottom) = lobes_at(ld)
    assert not top.present and not bottom.present
    assert top.area == 0 and top.diagnostic
