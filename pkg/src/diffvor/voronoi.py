"""Differentiable Voronoi diagram built on a fixed Delaunay triangulation.

Voronoi vertices are triangle circumcentres; hull cells are closed with
ghost points placed a distance ``omega`` out along the perpendicular
bisector of each hull edge. Every coordinate lives on the tape, so areas
and edge lengths can be differentiated with respect to the sites. Vertex
ordering and clipping decisions use numeric values only and are refreshed
whenever the diagram is rebuilt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .autodiff import DIV_EPS, Tape, TapeMismatchError, Var, sqrt, vsum
from .delaunay import Triangulation

__all__ = [
    "DegenerateGeometryError",
    "EmptyCellError",
    "DiffPoint",
    "Boundary",
    "VoronoiCell",
    "VoronoiEdge",
    "VoronoiDiagram",
    "DiagramSnapshot",
    "circumcenter",
    "ghost_point",
    "build_diagram",
    "cell_area",
    "edge_length",
    "clip_cell",
    "clip_segment",
    "clip_diagram",
    "default_omega",
    "shoelace",
]


class DegenerateGeometryError(ValueError):
    """Geometry too degenerate to differentiate; ``sites`` names the culprits."""

    def __init__(self, message: str, sites: Sequence[int] = ()):
        super().__init__(message)
        self.sites = tuple(int(s) for s in sites)


class EmptyCellError(DegenerateGeometryError):
    pass


class DiffPoint:
    """A 2D point whose coordinates are tape handles.

    ``key`` identifies where the point came from (site, circumcentre of a
    triangle, ghost of a hull edge, clip intersection) and is used to
    compare combinatorial structure between two builds.
    """

    __slots__ = ("x", "y", "key")

    def __init__(self, x: Var, y: Var, key=None):
        self.x = x
        self.y = y
        self.key = key

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x.value, self.y.value)

    def __repr__(self) -> str:
        return f"DiffPoint({self.x.value!r}, {self.y.value!r}, key={self.key!r})"


def shoelace(xy: np.ndarray) -> float:
    """Signed polygon area of an ``(n, 2)`` vertex array."""
    xy = np.asarray(xy, dtype=float)
    if len(xy) < 3:
        return 0.0
    x = xy[:, 0] - xy[0, 0]
    y = xy[:, 1] - xy[0, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class Boundary:
    """Fixed convex clipping polygon with CCW vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("boundary needs at least 3 (x, y) vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("boundary coordinates must be finite")
        if shoelace(v) < 0:
            v = v[::-1].copy()
        nxt = np.roll(v, -1, axis=0)
        nn = np.roll(v, -2, axis=0)
        turn = (nxt[:, 0] - v[:, 0]) * (nn[:, 1] - v[:, 1]) - (nxt[:, 1] - v[:, 1]) * (nn[:, 0] - v[:, 0])
        if np.any(turn <= 0):
            raise ValueError("boundary must be strictly convex")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        w = np.roll(v, -1, axis=0)
        object.__setattr__(
            self,
            "_edges",
            tuple((float(p[0]), float(p[1]), float(q[0] - p[0]), float(q[1] - p[1])) for p, q in zip(v, w)),
        )

    @classmethod
    def box(cls, x0: float, y0: float, x1: float, y1: float) -> "Boundary":
        return cls(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float))

    @classmethod
    def unit_square(cls) -> "Boundary":
        return cls.box(0.0, 0.0, 1.0, 1.0)

    @property
    def area(self) -> float:
        return shoelace(self.vertices)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(*np.ptp(self.vertices, axis=0)))

    def edge_functions(self, points) -> np.ndarray:
        """``(n_points, n_edges)`` signed side values; >= 0 means inside."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        c1 = self.vertices
        d = np.roll(c1, -1, axis=0) - c1
        return d[:, 0] * (p[:, 1:2] - c1[:, 1]) - d[:, 1] * (p[:, 0:1] - c1[:, 0])

    def contains(self, points, strict: bool = False) -> np.ndarray:
        f = self.edge_functions(points)
        return np.all(f > 0, axis=1) if strict else np.all(f >= 0, axis=1)

    def project(self, points) -> np.ndarray:
        """Nearest point of the polygon for each of ``points``."""
        p = np.array(points, dtype=float)
        out = p.copy()
        inside = self.contains(p)
        c1 = self.vertices
        c2 = np.roll(c1, -1, axis=0)
        for i in np.flatnonzero(~inside):
            d = c2 - c1
            t = np.clip(np.einsum("ij,ij->i", p[i] - c1, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
            cand = c1 + t[:, None] * d
            out[i] = cand[np.argmin(np.hypot(*(cand - p[i]).T))]
        return out

    def translated(self, shift) -> "Boundary":
        return Boundary(self.vertices + np.asarray(shift, dtype=float))


@dataclass
class VoronoiCell:
    site: int
    site_point: DiffPoint
    vertices: list
    is_unbounded: bool
    clipped: bool = False

    @cached_property
    def area(self) -> Var:
        return cell_area(None, self)

    def vertex_array(self) -> np.ndarray:
        return np.array([v.xy for v in self.vertices], dtype=float).reshape(-1, 2)


@dataclass
class VoronoiEdge:
    u: DiffPoint
    v: DiffPoint
    sites: tuple
    is_border_derived: bool

    @cached_property
    def length(self) -> Var:
        return edge_length(None, self.u, self.v)


@dataclass
class VoronoiDiagram:
    cells: list
    edges: list
    point_circumcenters: list
    triangulation: Triangulation
    omega: float
    boundary: Optional[Boundary] = None
    circumcenters: list = field(default_factory=list, repr=False)

    def areas(self) -> list:
        return [c.area for c in self.cells]

    def signature(self) -> tuple:
        """Combinatorial fingerprint: vertex provenance of every cell."""
        return tuple(tuple(v.key for v in c.vertices) for c in self.cells)

    def snapshot(self) -> "DiagramSnapshot":
        sites = np.array([c.site_point.xy for c in self.cells], dtype=float).reshape(-1, 2)
        polys = [c.vertex_array() for c in self.cells]
        areas = np.array([c.area.value for c in self.cells], dtype=float)
        edges = np.array(
            [e.u.xy + e.v.xy for e in self.edges], dtype=float
        ).reshape(-1, 4)
        edge_sites = np.array([e.sites for e in self.edges], dtype=np.int64).reshape(-1, 2)
        return DiagramSnapshot(
            sites=sites,
            cells=polys,
            areas=areas,
            unbounded=np.array([c.is_unbounded for c in self.cells], dtype=bool),
            edges=edges,
            edge_sites=edge_sites,
            edge_border=np.array([e.is_border_derived for e in self.edges], dtype=bool),
            boundary=None if self.boundary is None else np.array(self.boundary.vertices),
        )


@dataclass
class DiagramSnapshot:
    """Numeric copy of a diagram, detached from any tape."""

    sites: np.ndarray
    cells: list
    areas: np.ndarray
    unbounded: np.ndarray
    edges: np.ndarray
    edge_sites: np.ndarray
    edge_border: np.ndarray
    boundary: Optional[np.ndarray] = None

    @property
    def edge_lengths(self) -> np.ndarray:
        return np.hypot(self.edges[:, 2] - self.edges[:, 0], self.edges[:, 3] - self.edges[:, 1])

    @classmethod
    def empty(cls) -> "DiagramSnapshot":
        return cls(
            sites=np.zeros((0, 2)),
            cells=[],
            areas=np.zeros(0),
            unbounded=np.zeros(0, dtype=bool),
            edges=np.zeros((0, 4)),
            edge_sites=np.zeros((0, 2), dtype=np.int64),
            edge_border=np.zeros(0, dtype=bool),
        )


def _tape_of(*points: DiffPoint) -> Tape:
    tape = points[0].x.tape
    for p in points:
        if p.x.tape is not tape or p.y.tape is not tape:
            raise TapeMismatchError("points belong to different tapes")
    return tape


def default_omega(points, boundary: Optional[Boundary] = None) -> float:
    """100 x the bounding-box diagonal of the sites (and boundary, if any)."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if boundary is not None:
        p = np.vstack([p, boundary.vertices])
    diag = float(np.hypot(*np.ptp(p, axis=0)))
    return 100.0 * max(diag, 1e-12)


def circumcenter(tape: Optional[Tape], a: DiffPoint, b: DiffPoint, c: DiffPoint,
                 key=None, sites: Sequence[int] = ()) -> DiffPoint:
    """Circumcentre of triangle abc, recorded on the tape.

    Each coordinate is one node over the six input coordinates with its
    closed-form Jacobian. The formula is evaluated with ``c`` as origin,
    which is algebraically the absolute-coordinate expression
    ``v1 = [(|a|^2 - |c|^2)(b2 - c2) - (|b|^2 - |c|^2)(a2 - c2)] / D`` but
    loses less to cancellation.
    """
    t = _tape_of(a, b, c)
    if tape is not None and tape is not t:
        raise TapeMismatchError("points are not on the given tape")
    vals = t._values
    cx, cy = vals[c.x.index], vals[c.y.index]
    ux, uy = vals[a.x.index] - cx, vals[a.y.index] - cy
    wx, wy = vals[b.x.index] - cx, vals[b.y.index] - cy
    d = 2.0 * (ux * wy - wx * uy)
    if abs(d) < DIV_EPS:
        raise DegenerateGeometryError(
            f"degenerate triangle {tuple(sites)} (D={d:.3g})", sites
        )
    la = ux * ux + uy * uy
    lb = wx * wx + wy * wy
    rx = (la * wy - lb * uy) / d
    ry = (lb * ux - la * wx) / d
    # d/d(ux, uy, wx, wy) of rx and ry via the quotient rule
    rx_ux = (2.0 * ux * wy - rx * 2.0 * wy) / d
    rx_uy = (2.0 * uy * wy - lb + rx * 2.0 * wx) / d
    rx_wx = (-2.0 * wx * uy + rx * 2.0 * uy) / d
    rx_wy = (la - 2.0 * wy * uy - rx * 2.0 * ux) / d
    ry_ux = (lb - 2.0 * ux * wx - ry * 2.0 * wy) / d
    ry_uy = (-2.0 * uy * wx + ry * 2.0 * wx) / d
    ry_wx = (2.0 * wx * ux - la + ry * 2.0 * uy) / d
    ry_wy = (2.0 * wy * ux - ry * 2.0 * ux) / d
    ins = (a.x, a.y, b.x, b.y, c.x, c.y)
    vx = t.record(
        cx + rx, ins,
        (rx_ux, rx_uy, rx_wx, rx_wy, 1.0 - rx_ux - rx_wx, -rx_uy - rx_wy),
    )
    vy = t.record(
        cy + ry, ins,
        (ry_ux, ry_uy, ry_wx, ry_wy, -ry_ux - ry_wx, 1.0 - ry_uy - ry_wy),
    )
    return DiffPoint(vx, vy, key)


def ghost_point(tape: Optional[Tape], p: DiffPoint, q: DiffPoint, outward_ref, omega: float,
                key=None, anchor: Optional[DiffPoint] = None) -> DiffPoint:
    """Point at distance ``omega`` from the midpoint of pq along the
    perpendicular of pq that points away from ``outward_ref``.

    ``anchor`` replaces the midpoint as the start of the ray; it must lie on
    the perpendicular bisector (the circumcentre of the edge's triangle).
    """
    t = _tape_of(p, q)
    if tape is not None and tape is not t:
        raise TapeMismatchError("points are not on the given tape")
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega!r}")
    dx = p.x - q.x
    dy = p.y - q.y
    length = sqrt(dx * dx + dy * dy)
    mx = (p.x + q.x) * 0.5
    my = (p.y + q.y) * 0.5
    rx, ry = outward_ref
    # candidate perpendicular (dy, -dx); flip if it points at the reference
    side = dy.value * (rx - mx.value) - dx.value * (ry - my.value)
    if side == 0.0:
        raise DegenerateGeometryError("outward reference lies on the border edge")
    if side < 0:
        nx, ny = dy, -dx
    else:
        nx, ny = -dy, dx
    scale = omega / length
    if anchor is not None:
        return DiffPoint(anchor.x + nx * scale, anchor.y + ny * scale, key)
    return DiffPoint(mx + nx * scale, my + ny * scale, key)


def build_diagram(tape: Tape, sites: Sequence[DiffPoint], tri: Triangulation,
                  omega: float) -> VoronoiDiagram:
    """Voronoi diagram of ``sites`` dual to ``tri``.

    One circumcentre per triangle; each hull edge contributes one ghost point
    to both of its endpoints. Cell vertices are sorted CCW around the site.
    """
    n = len(sites)
    if n != tri.n_sites:
        raise ValueError(f"{n} sites but triangulation has {tri.n_sites}")
    xy = np.array([s.xy for s in sites], dtype=float)
    tris = tri.triangles.tolist()

    ccs = [
        circumcenter(tape, sites[a], sites[b], sites[c], key=("c", t), sites=(a, b, c))
        for t, (a, b, c) in enumerate(tris)
    ]

    point_cc: list[list[DiffPoint]] = [[] for _ in range(n)]
    for i in range(n):
        for t in tri.site_triangles[i]:
            point_cc[i].append(ccs[t])

    ghosts = {}
    for i, j, k in tri.border:
        t = tri.edge_adjacency[(i, j) if i < j else (j, i)][0]
        cc = ccs[t]
        # A skinny hull triangle can put the circumcentre further out than
        # omega; its ghost is then placed omega beyond the circumcentre.
        anchor = None
        tag = "g"
        mx, my = 0.5 * (xy[i] + xy[j])
        ex, ey = xy[i] - xy[j]
        elen = math.hypot(ex, ey)
        if elen > 0.0:
            cx, cy = cc.xy
            reach = abs((cx - mx) * ey - (cy - my) * ex) / elen
            if reach > 0.5 * omega:
                anchor = cc
                tag = "G"
        g = ghost_point(tape, sites[i], sites[j], xy[k], omega, key=(tag, i, j), anchor=anchor)
        gx, gy = g.xy
        cx, cy = cc.xy
        if (gx - cx) * (gx - mx) + (gy - cy) * (gy - my) <= 0.0:
            raise DegenerateGeometryError(
                f"ghost of hull edge ({i}, {j}) falls short of its circumcentre",
                (i, j, k),
            )
        ghosts[(i, j)] = g
        point_cc[i].append(g)
        point_cc[j].append(g)

    on_hull = tri.on_hull()
    cells = []
    for i in range(n):
        sx, sy = xy[i]
        verts = point_cc[i]
        order = sorted(
            range(len(verts)),
            key=lambda k: math.atan2(verts[k].y.value - sy, verts[k].x.value - sx),
        )
        cells.append(
            VoronoiCell(
                site=i,
                site_point=sites[i],
                vertices=[verts[k] for k in order],
                is_unbounded=bool(on_hull[i]),
            )
        )

    edges = []
    for (i, j), ts in tri.edge_adjacency.items():
        if len(ts) == 2:
            edges.append(VoronoiEdge(ccs[ts[0]], ccs[ts[1]], (i, j), False))
        else:
            g = ghosts.get((i, j)) or ghosts[(j, i)]
            edges.append(VoronoiEdge(ccs[ts[0]], g, (i, j), True))

    return VoronoiDiagram(
        cells=cells,
        edges=edges,
        point_circumcenters=point_cc,
        triangulation=tri,
        omega=float(omega),
        circumcenters=ccs,
    )


def cell_area(tape: Optional[Tape], cell: VoronoiCell) -> Var:
    """Shoelace area of a CCW cell polygon, as one node.

    Coordinates are taken relative to the site's current numeric position;
    the offset is a constant, so value and gradient are unchanged. The local
    partials are dA/dx_i = (y_{i+1} - y_{i-1}) / 2 and
    dA/dy_i = (x_{i-1} - x_{i+1}) / 2.
    """
    verts = cell.vertices
    n = len(verts)
    if n < 3:
        raise DegenerateGeometryError(f"cell {cell.site} has {n} vertices", (cell.site,))
    t = verts[0].x.tape
    if tape is not None and t is not tape:
        raise TapeMismatchError("cell is not on the given tape")
    vals = t._values
    ox, oy = cell.site_point.xy
    xs = [vals[v.x.index] - ox for v in verts]
    ys = [vals[v.y.index] - oy for v in verts]
    area = 0.5 * math.fsum(xs[k - 1] * ys[k] - xs[k] * ys[k - 1] for k in range(n))
    if not area > 0.0:
        raise DegenerateGeometryError(
            f"cell {cell.site} has non-positive area {area:.3g}", (cell.site,)
        )
    inputs = []
    partials = []
    for k, v in enumerate(verts):
        k1 = (k + 1) % n
        inputs.append(v.x)
        partials.append(0.5 * (ys[k1] - ys[k - 1]))
        inputs.append(v.y)
        partials.append(0.5 * (xs[k - 1] - xs[k1]))
    return t.record(area, inputs, partials)


def edge_length(tape: Optional[Tape], u: DiffPoint, v: DiffPoint) -> Var:
    t = _tape_of(u, v)
    if tape is not None and tape is not t:
        raise TapeMismatchError("points are not on the given tape")
    dx = u.x - v.x
    dy = u.y - v.y
    if math.hypot(dx.value, dy.value) < DIV_EPS:
        raise DegenerateGeometryError(f"edge endpoints {u.key} and {v.key} coincide")
    return sqrt(dx * dx + dy * dy)


def _clip_edges(boundary: Boundary):
    return boundary._edges


def _side(p: DiffPoint, e) -> float:
    cx, cy, dx, dy = e
    return dx * (p.y.value - cy) - dy * (p.x.value - cx)


def _intersect(s: DiffPoint, e: DiffPoint, fs: float, fe: float, edge, k: int) -> DiffPoint:
    if abs(fs - fe) < DIV_EPS:
        # both ends within rounding of the line
        return s if fs >= 0 else e
    cx, cy, dx, dy = edge
    ex = e.x - s.x
    ey = e.y - s.y
    f_s = (s.y - cy) * dx - (s.x - cx) * dy
    den = ex * dy - ey * dx
    t = f_s / den
    return DiffPoint(s.x + t * ex, s.y + t * ey, ("x", k, s.key, e.key))


def clip_cell(tape: Optional[Tape], cell: VoronoiCell, boundary: Boundary) -> VoronoiCell:
    """Sutherland-Hodgman clip of ``cell`` against a convex ``boundary``.

    Intersection vertices are recorded on the tape; boundary coordinates
    enter as constants. A vertex exactly on a boundary line counts as inside.
    """
    out = list(cell.vertices)
    if tape is not None and out and out[0].x.tape is not tape:
        raise TapeMismatchError("cell is not on the given tape")
    for k, edge in enumerate(_clip_edges(boundary)):
        f = [_side(v, edge) for v in out]
        if min(f) >= 0.0:
            continue
        if max(f) < 0.0:
            raise EmptyCellError(
                f"cell {cell.site} lies outside the boundary", (cell.site,)
            )
        new = []
        m = len(out)
        for i in range(m):
            s, e = out[i - 1], out[i]
            fs, fe = f[i - 1], f[i]
            if fe >= 0.0:
                if fs < 0.0:
                    new.append(_intersect(s, e, fs, fe, edge, k))
                new.append(e)
            elif fs >= 0.0:
                new.append(_intersect(s, e, fs, fe, edge, k))
        out = new
    if len(out) < 3:
        raise EmptyCellError(f"cell {cell.site} clipped to a sliver", (cell.site,))
    return VoronoiCell(
        site=cell.site,
        site_point=cell.site_point,
        vertices=out,
        is_unbounded=cell.is_unbounded,
        clipped=True,
    )


def clip_segment(tape: Optional[Tape], u: DiffPoint, v: DiffPoint,
                 boundary: Boundary) -> Optional[tuple]:
    """Part of segment uv inside ``boundary``, or None when disjoint."""
    for k, edge in enumerate(_clip_edges(boundary)):
        fu, fv = _side(u, edge), _side(v, edge)
        if fu >= 0.0 and fv >= 0.0:
            continue
        if fu < 0.0 and fv < 0.0:
            return None
        x = _intersect(u, v, fu, fv, edge, k)
        if fu < 0.0:
            u = x
        else:
            v = x
    return u, v


def clip_diagram(tape: Optional[Tape], diagram: VoronoiDiagram,
                 boundary: Boundary, clip_edges: bool = True) -> VoronoiDiagram:
    """Clip every cell of ``diagram`` to ``boundary``; edges too unless
    ``clip_edges`` is off, in which case the result carries no edges."""
    cells = diagram.cells
    counts = [len(c.vertices) for c in cells]
    flat = np.array([v.xy for c in cells for v in c.vertices], dtype=float).reshape(-1, 2)
    worst = boundary.edge_functions(flat).min(axis=1) if len(flat) else np.zeros(0)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    inside = np.minimum.reduceat(worst, offsets) >= 0.0 if len(flat) else np.zeros(0, bool)
    clipped = []
    for c, ok in zip(cells, inside):
        if ok:
            clipped.append(
                VoronoiCell(c.site, c.site_point, list(c.vertices), c.is_unbounded, clipped=True)
            )
        else:
            clipped.append(clip_cell(tape, c, boundary))

    edges = []
    for e in diagram.edges if clip_edges else ():
        seg = clip_segment(tape, e.u, e.v, boundary)
        if seg is not None:
            edges.append(VoronoiEdge(seg[0], seg[1], e.sites, e.is_border_derived))
    return VoronoiDiagram(
        cells=clipped,
        edges=edges,
        point_circumcenters=diagram.point_circumcenters,
        triangulation=diagram.triangulation,
        omega=diagram.omega,
        boundary=boundary,
        circumcenters=diagram.circumcenters,
    )
