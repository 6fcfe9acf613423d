import math

import numpy as np
import pytest

from diffvor import autodiff as ad
from diffvor.autodiff import Tape
from diffvor.delaunay import triangulate
from diffvor.voronoi import (
    Boundary,
    DegenerateGeometryError,
    DiagramSnapshot,
    DiffPoint,
    EmptyCellError,
    VoronoiCell,
    build_diagram,
    cell_area,
    circumcenter,
    clip_cell,
    clip_diagram,
    clip_segment,
    default_omega,
    edge_length,
    ghost_point,
    shoelace,
)
from oracles import close, fd_gradient, halfplane_areas, halfplane_cell_float

UNIT = Boundary.unit_square()


def _points(tape, coords, prefix="s"):
    return [DiffPoint(tape.leaf(x), tape.leaf(y), (prefix, i)) for i, (x, y) in enumerate(np.asarray(coords, float).tolist())]


def diagram(coords, boundary=None, omega=None, tri=None, clip_edges=True):
    coords = np.asarray(coords, float).reshape(-1, 2)
    tape = Tape()
    sites = _points(tape, coords)
    tri = triangulate(coords) if tri is None else tri
    omega = default_omega(coords, boundary) if omega is None else omega
    d = build_diagram(tape, sites, tri, omega)
    if boundary is not None:
        d = clip_diagram(tape, d, boundary, clip_edges=clip_edges)
    return tape, d


def _cc_value(pts):
    t = Tape()
    a, b, c = _points(t, pts)
    return t, circumcenter(t, a, b, c)


# circumcentre

def test_circumcenter_right_triangle():
    _, v = _cc_value([[0, 0], [1, 0], [0, 1]])
    assert v.xy == pytest.approx((0.5, 0.5), abs=1e-15)


def test_circumcenter_equilateral():
    _, v = _cc_value([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    assert v.xy == pytest.approx((0.5, math.sqrt(3) / 6), abs=1e-15)


def test_circumcenter_random_equidistant_and_fd():
    pts = np.random.default_rng(7).random((3, 2))
    t, v = _cc_value(pts)
    d = [math.dist(v.xy, p) for p in pts]
    assert (max(d) - min(d)) / max(d) < 1e-9
    for comp in (0, 1):
        out = v.x if comp == 0 else v.y
        g = t.backward(out)
        fd = fd_gradient(lambda p: _cc_value(p.reshape(3, 2))[1].xy[comp], pts.ravel())
        assert close(g, fd, rtol=1e-5, atol=1e-8)


def test_circumcenter_of_reference_triangle_matches_fd():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    t, v = _cc_value(pts)
    fd = fd_gradient(lambda p: _cc_value(p.reshape(3, 2))[1].xy[0], pts.ravel())
    assert close(t.backward(v.x), fd, rtol=1e-6, atol=1e-9)


def _cc_elementary(t, a, b, c):
    # textbook absolute-coordinate formula from basic tape ops
    d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y))
    na, nb, nc = a.x * a.x + a.y * a.y, b.x * b.x + b.y * b.y, c.x * c.x + c.y * c.y
    ux = (na * (b.y - c.y) + nb * (c.y - a.y) + nc * (a.y - b.y)) / d
    uy = (na * (c.x - b.x) + nb * (a.x - c.x) + nc * (b.x - a.x)) / d
    return ux, uy


@pytest.mark.parametrize("seed", range(5))
def test_fused_circumcenter_matches_elementary_ops(seed):
    pts = np.random.default_rng(100 + seed).random((3, 2))
    t = Tape()
    a, b, c = _points(t, pts)
    fused = circumcenter(t, a, b, c)
    ux, uy = _cc_elementary(t, a, b, c)
    assert fused.x.value == pytest.approx(ux.value, rel=1e-12)
    assert fused.y.value == pytest.approx(uy.value, rel=1e-12)
    assert np.allclose(t.backward(fused.x), t.backward(ux), rtol=1e-9, atol=1e-12)
    assert np.allclose(t.backward(fused.y), t.backward(uy), rtol=1e-9, atol=1e-12)


def test_circumcenter_degenerate():
    t = Tape()
    a, b, c = _points(t, [[0, 0], [1, 1], [2, 2]])
    with pytest.raises(DegenerateGeometryError):
        circumcenter(t, a, b, c)


# ghost points

def test_ghost_point_examples():
    t = Tape()
    p, q = _points(t, [[0, 0], [2, 0]])
    assert ghost_point(t, p, q, (1.0, 1.0), 1.0).xy == pytest.approx((1.0, -1.0))
    assert ghost_point(t, p, q, (1.0, 1.0), 5.0).xy == pytest.approx((1.0, -5.0))
    with pytest.raises(ValueError):
        ghost_point(t, p, q, (1.0, 1.0), 0.0)


def test_ghost_points_away_from_reference_and_fd():
    pts = np.random.default_rng(21).random((25, 2))
    tri = triangulate(pts)
    (i, j), k = [((a, b), c) for a, b, c in tri.border][3]
    ref = pts[k]

    def ghost(flat):
        t = Tape()
        s = _points(t, flat.reshape(-1, 2))
        return t, ghost_point(t, s[i], s[j], ref, 3.0)

    t, g = ghost(pts.ravel())
    mid = 0.5 * (pts[i] + pts[j])
    assert np.dot(np.array(g.xy) - mid, ref - mid) < 0
    for comp in (0, 1):
        out = g.x if comp == 0 else g.y
        fd = fd_gradient(lambda f: ghost(f)[1].xy[comp], pts.ravel())
        assert close(t.backward(out), fd)


# diagram construction

def test_square_corners_share_one_voronoi_vertex():
    _, d = diagram([[0, 0], [1, 0], [1, 1], [0, 1]])
    assert len(d.circumcenters) == 2
    for c in d.circumcenters:
        assert c.xy == pytest.approx((0.5, 0.5), abs=1e-15)
    assert all(c.is_unbounded for c in d.cells)


def test_square_corners_clipped_quarters():
    _, d = diagram([[0, 0], [1, 0], [1, 1], [0, 1]], UNIT)
    assert [c.area.value for c in d.cells] == pytest.approx([0.25] * 4, abs=1e-15)


def test_cross_center_cell_is_unit_square():
    _, d = diagram([[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1]])
    c = d.cells[0]
    assert not c.is_unbounded
    got = sorted(tuple(np.round(v, 12)) for v in c.vertex_array())
    assert got == sorted([(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)])
    # bisector half-planes of the four neighbours cut out a 1 x 1 square
    box = [[-5, -5], [5, -5], [5, 5], [-5, 5]]
    oracle = halfplane_areas([[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1]], box)[0]
    assert oracle == 1.0
    assert c.area.value == pytest.approx(oracle, abs=1e-15)


def test_finite_edges_join_flanking_circumcenters():
    pts = np.random.default_rng(50).random((50, 2))
    _, d = diagram(pts)
    tri = d.triangulation
    finite = [e for e in d.edges if not e.is_border_derived]
    assert len(finite) == len(tri.interior_edges())
    for e in finite:
        ts = tri.edge_adjacency[tuple(sorted(e.sites))]
        assert {e.u.key, e.v.key} == {("c", ts[0]), ("c", ts[1])}
        assert e.u.xy == d.circumcenters[ts[0]].xy


def test_duality_counts():
    pts = np.random.default_rng(51).random((80, 2))
    _, d = diagram(pts)
    tri = d.triangulation
    assert sum(not e.is_border_derived for e in d.edges) == len(tri.interior_edges())
    for i in np.flatnonzero(~tri.on_hull()):
        degree = sum(1 for e in tri.edge_adjacency if i in e)
        assert len(d.cells[i].vertices) == degree


def test_unbounded_iff_hull_and_vertex_sets():
    pts = np.random.default_rng(52).random((60, 2))
    _, d = diagram(pts)
    on_hull = d.triangulation.on_hull()
    for i, c in enumerate(d.cells):
        assert c.is_unbounded == bool(on_hull[i])
        assert {v.key for v in c.vertices} == {v.key for v in d.point_circumcenters[i]}


def test_cells_are_ccw_simple():
    pts = np.random.default_rng(53).random((100, 2))
    _, d = diagram(pts)
    for c in d.cells:
        xy = c.vertex_array()
        assert shoelace(xy) > 0
        nxt, nn = np.roll(xy, -1, 0), np.roll(xy, -2, 0)
        turn = (nxt[:, 0] - xy[:, 0]) * (nn[:, 1] - xy[:, 1]) - (nxt[:, 1] - xy[:, 1]) * (nn[:, 0] - xy[:, 0])
        assert np.all(turn >= -1e-12)


def test_site_count_mismatch():
    tri = triangulate(np.random.default_rng(0).random((5, 2)))
    t = Tape()
    with pytest.raises(ValueError):
        build_diagram(t, _points(t, np.random.default_rng(1).random((4, 2))), tri, 10.0)


# areas and lengths

def _cell_from(t, poly):
    pts = _points(t, poly, "v")
    site = DiffPoint(t.leaf(float(np.mean(poly[:, 0]))), t.leaf(float(np.mean(poly[:, 1]))), ("s", 0))
    return VoronoiCell(0, site, pts, False)


def test_cell_area_unit_square_and_triangle():
    t = Tape()
    assert cell_area(t, _cell_from(t, np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))).value == 1.0
    assert cell_area(t, _cell_from(t, np.array([[0, 0], [1, 0], [0, 1]], float))).value == pytest.approx(0.5, abs=1e-15)


def test_cell_area_rejects_clockwise():
    t = Tape()
    with pytest.raises(DegenerateGeometryError):
        cell_area(t, _cell_from(t, np.array([[0, 0], [0, 1], [1, 1], [1, 0]], float)))


def test_random_heptagon_area_and_gradient():
    rng = np.random.default_rng(70)
    ang = np.sort(rng.uniform(0, 2 * np.pi, 7))
    rad = rng.uniform(0.8, 1.2)
    poly = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]) + rng.random(2)
    fan = sum(0.5 * ((poly[k] - poly[0])[0] * (poly[k + 1] - poly[0])[1]
                     - (poly[k] - poly[0])[1] * (poly[k + 1] - poly[0])[0]) for k in range(1, 6))

    def area(flat):
        t = Tape()
        return t, cell_area(t, _cell_from(t, flat.reshape(-1, 2)))

    t, a = area(poly.ravel())
    assert a.value == pytest.approx(fan, rel=1e-12)
    g = t.backward(a)[:14]
    fd = fd_gradient(lambda f: area(f)[1].value, poly.ravel())
    assert close(g, fd, rtol=1e-6, atol=1e-9)


def test_edge_length():
    t = Tape()
    u, v = _points(t, [[0, 0], [3, 4]])
    assert edge_length(t, u, v).value == 5.0


def test_coincident_edge_rejected():
    _, d = diagram([[0, 0], [1, 0], [1, 1], [0, 1]])
    (e,) = [e for e in d.edges if not e.is_border_derived]
    with pytest.raises(DegenerateGeometryError):
        edge_length(None, e.u, e.v)


def test_perimeters_equal_edge_sums():
    pts = np.random.default_rng(54).random((70, 2))
    _, d = diagram(pts)
    interior = ~d.triangulation.on_hull()
    perim = 0.0
    for c in d.cells:
        if interior[c.site]:
            xy = c.vertex_array()
            perim += np.sum(np.hypot(*(np.roll(xy, -1, 0) - xy).T))
    edges = 0.0
    for e in d.edges:
        both = int(interior[e.sites[0]]) + int(interior[e.sites[1]])
        if both and not e.is_border_derived:
            edges += both * math.dist(e.u.xy, e.v.xy)
    assert perim == pytest.approx(edges, rel=1e-12)


# clipping

def test_clip_big_square_to_unit_square():
    t = Tape()
    cell = _cell_from(t, np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float))
    out = clip_cell(t, cell, UNIT)
    assert out.area.value == pytest.approx(1.0, abs=1e-15)


def test_clip_inside_cell_is_unchanged():
    t = Tape()
    cell = _cell_from(t, np.array([[0.2, 0.2], [0.6, 0.3], [0.4, 0.7]], float))
    out = clip_cell(t, cell, UNIT)
    assert all(a is b for a, b in zip(out.vertices, cell.vertices))
    assert len(out.vertices) == len(cell.vertices)


def test_clip_vertex_on_boundary_counts_inside():
    t = Tape()
    cell = _cell_from(t, np.array([[0.0, 0.2], [0.6, 0.3], [0.4, 1.0]], float))
    out = clip_cell(t, cell, UNIT)
    assert all(a is b for a, b in zip(out.vertices, cell.vertices))


def test_clip_outside_cell_is_empty():
    t = Tape()
    cell = _cell_from(t, np.array([[2, 2], [3, 2], [3, 3]], float))
    with pytest.raises(EmptyCellError):
        clip_cell(t, cell, UNIT)


def test_clip_segment():
    t = Tape()
    u, v = _points(t, [[-1, 0.5], [2, 0.5]])
    a, b = clip_segment(t, u, v, UNIT)
    assert a.xy == pytest.approx((0.0, 0.5)) and b.xy == pytest.approx((1.0, 0.5))
    u, v = _points(t, [[-1, 2], [2, 2]])
    assert clip_segment(t, u, v, UNIT) is None


def test_unbounded_cells_clip_to_oracle():
    pts = np.random.default_rng(60).uniform(0.1, 0.9, (15, 2))
    omega = 100 * math.hypot(*np.ptp(pts, axis=0))
    _, d = diagram(pts, UNIT, omega=omega)
    oracle = halfplane_areas(pts, UNIT.vertices)
    for c in d.cells:
        if c.is_unbounded:
            assert c.area.value == pytest.approx(oracle[c.site], rel=1e-9)


def test_clipped_polygons_match_oracle_vertices():
    pts = np.random.default_rng(61).random((9, 2))
    _, d = diagram(pts, UNIT)
    for c in d.cells:
        ref = halfplane_cell_float(pts, c.site, UNIT.vertices)
        got = c.vertex_array()
        # same vertex set up to rounding and duplicate points
        for p in ref:
            assert np.min(np.hypot(*(got - p).T)) < 1e-9
        for p in got:
            assert np.min(np.hypot(*(ref - p).T)) < 1e-9


@pytest.mark.parametrize("n", [10, 100, 1000])
def test_partition_of_area(n):
    pts = np.random.default_rng(n).random((n, 2))
    _, d = diagram(pts, UNIT)
    total = math.fsum(c.area.value for c in d.cells)
    assert abs(total - 1.0) <= 1e-9


def test_partition_of_area_pentagon():
    ang = np.linspace(0, 2 * np.pi, 5, endpoint=False)
    box = Boundary(np.column_stack([np.cos(ang), np.sin(ang)]))
    pts = np.random.default_rng(3).uniform(-0.5, 0.5, (200, 2))
    pts = pts[box.contains(pts, strict=True)]
    _, d = diagram(pts, box)
    assert math.fsum(c.area.value for c in d.cells) == pytest.approx(box.area, rel=1e-9)


@pytest.mark.parametrize("n", range(5, 13))
def test_oracle_equivalence(n):
    for seed in range(3):
        pts = np.random.default_rng(1000 * n + seed).random((n, 2))
        _, d = diagram(pts, UNIT)
        ours = np.array([c.area.value for c in d.cells])
        assert np.allclose(ours, halfplane_areas(pts, UNIT.vertices), rtol=1e-9, atol=0)


def test_omega_approximation():
    pts = np.random.default_rng(62).random((40, 2))
    w = 100 * math.hypot(*np.ptp(pts, axis=0))
    _, d1 = diagram(pts, UNIT, omega=w)
    _, d2 = diagram(pts, UNIT, omega=10 * w)
    a1 = np.array([c.area.value for c in d1.cells])
    a2 = np.array([c.area.value for c in d2.cells])
    assert np.allclose(a1, a2, rtol=1e-9, atol=0)


@pytest.mark.parametrize("bounded", [True, False])
def test_area_gradients_match_fd(bounded):
    pts = np.random.default_rng(63).uniform(0.05, 0.95, (12, 2))
    tri = triangulate(pts)
    box = UNIT if bounded else None
    omega = default_omega(pts, box)
    for i in (0, 5, 11):
        t, d = diagram(pts, box, omega=omega, tri=tri)
        g = t.backward(d.cells[i].area)
        fd = fd_gradient(lambda f: diagram(f, box, omega=omega, tri=tri)[1].cells[i].area.value, pts.ravel())
        assert close(g, fd, rtol=1e-5, atol=1e-8)


def test_default_omega():
    pts = np.array([[0, 0], [3, 4], [1, 1]], float)
    assert default_omega(pts) == pytest.approx(500.0)
    assert default_omega(pts, Boundary.box(-3, -4, 0, 0)) == pytest.approx(1000.0)


# boundary and snapshots

def test_boundary_validation():
    with pytest.raises(ValueError):
        Boundary(np.array([[0, 0], [1, 0]], float))
    with pytest.raises(ValueError):
        Boundary(np.array([[0, 0], [2, 0], [1, 0.2], [1, 2]], float))
    cw = Boundary(np.array([[0, 0], [0, 1], [1, 1], [1, 0]], float))
    assert cw.area == 1.0


def test_boundary_project():
    p = UNIT.project([[0.5, 0.5], [1.5, 0.5], [-1.0, -1.0]])
    assert p.tolist() == [[0.5, 0.5], [1.0, 0.5], [0.0, 0.0]]


def test_snapshot_and_signature():
    pts = np.random.default_rng(64).random((20, 2))
    _, d = diagram(pts, UNIT)
    snap = d.snapshot()
    assert len(snap.cells) == 20 and snap.edges.shape[1] == 4
    assert np.all(snap.edge_lengths >= 0)
    assert math.fsum(snap.areas) == pytest.approx(1.0, rel=1e-12)
    _, d2 = diagram(pts, UNIT)
    assert d.signature() == d2.signature()
    empty = DiagramSnapshot.empty()
    assert len(empty.cells) == 0


def test_tape_mismatch_in_geometry():
    t1, t2 = Tape(), Tape()
    a, b = _points(t1, [[0, 0], [1, 0]])
    (c,) = _points(t2, [[0, 1]])
    with pytest.raises(ad.TapeMismatchError):
        circumcenter(None, a, b, c)
