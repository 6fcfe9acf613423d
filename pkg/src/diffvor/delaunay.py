"""Delaunay triangulation of a numeric point snapshot.

This layer is not differentiable. It only supplies combinatorics
(triangles, adjacency, hull, border edges) to :mod:`diffvor.voronoi`.

Construction is Bowyer-Watson with a large super-triangle in coordinates
normalised to the unit bounding box, followed by a pocket fill along the
hull and a Lawson flip pass. The flip pass makes the result Delaunay even
when a cavity had to be shrunk to keep it star-shaped, and it applies the
cocircular tie-break: of the two diagonals of a cocircular quad, keep the
one incident to the lowest site index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "PRED_EPS",
    "DUP_EPS",
    "TriangulationError",
    "CollinearPointsError",
    "DuplicatePointsError",
    "Triangulation",
    "orient2d",
    "incircle",
    "triangulate",
    "border_edges",
    "triangles_adjacent_to_site",
]

# Predicate band and duplicate radius, relative to the unit-normalised bbox.
PRED_EPS = 1e-12
DUP_EPS = 1e-12

_SUPER_RADIUS = 1.0e4


class TriangulationError(ValueError):
    pass


class CollinearPointsError(TriangulationError):
    pass


class DuplicatePointsError(TriangulationError):
    def __init__(self, i: int, j: int):
        super().__init__(f"sites {i} and {j} coincide")
        self.pair = (i, j)


def orient2d(ax, ay, bx, by, cx, cy) -> float:
    """Twice the signed area of (a, b, c); positive when counter-clockwise."""
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def incircle(ax, ay, bx, by, cx, cy, dx, dy) -> float:
    """Positive when d lies inside the circumcircle of the CCW triangle abc."""
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    return (
        alift * (bdx * cdy - cdx * bdy)
        + blift * (cdx * ady - adx * cdy)
        + clift * (adx * bdy - bdx * ady)
    )


@dataclass(frozen=True)
class Triangulation:
    """Combinatorial Delaunay output for one point snapshot.

    ``triangles`` rows are CCW under ``points``. ``border`` lists hull edges
    as ``(i, j, k)``: the directed edge i -> j runs CCW along the hull and k
    is the third vertex of its unique triangle.
    """

    points: np.ndarray
    triangles: np.ndarray
    edge_adjacency: dict
    hull: list
    border: list
    site_triangles: list = field(repr=False)

    @property
    def n_sites(self) -> int:
        return len(self.points)

    @property
    def border_edges(self) -> list:
        return [(i, j) for i, j, _ in self.border]

    def interior_edges(self) -> list:
        return [e for e, ts in self.edge_adjacency.items() if len(ts) == 2]

    def on_hull(self) -> np.ndarray:
        mask = np.zeros(self.n_sites, dtype=bool)
        mask[self.hull] = True
        return mask

    def signed_double_areas(self, points: np.ndarray) -> np.ndarray:
        """Per-triangle 2 x signed area under ``points`` (vectorised)."""
        p = np.asarray(points, dtype=float)
        a, b, c = p[self.triangles[:, 0]], p[self.triangles[:, 1]], p[self.triangles[:, 2]]
        return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])


def _brio_order(q: np.ndarray) -> list[int]:
    # row-snake order over a sqrt(n) grid keeps consecutive inserts close
    n = len(q)
    rows = max(1, int(math.sqrt(n / 2.0)))
    row = np.minimum((q[:, 1] * rows).astype(int), rows - 1)
    key_x = np.where(row % 2 == 0, q[:, 0], -q[:, 0])
    return np.lexsort((np.arange(n), key_x, row)).tolist()


class _Builder:
    def __init__(self, q: np.ndarray):
        n = len(q)
        self.n = n
        self.X = q[:, 0].tolist()
        self.Y = q[:, 1].tolist()
        r = _SUPER_RADIUS
        for k in range(3):
            ang = math.pi / 2 + 2 * math.pi * k / 3
            self.X.append(0.5 + r * math.cos(ang))
            self.Y.append(0.5 + r * math.sin(ang))
        self.tv = [[n, n + 1, n + 2]]
        self.tn = [[-1, -1, -1]]
        self.alive = [True]
        self.last = 0

    def orient(self, a, b, c):
        X, Y = self.X, self.Y
        return orient2d(X[a], Y[a], X[b], Y[b], X[c], Y[c])

    def locate(self, p: int) -> int:
        X, Y = self.X, self.Y
        px, py = X[p], Y[p]
        t = self.last
        if not self.alive[t]:
            t = next(i for i in range(len(self.alive) - 1, -1, -1) if self.alive[i])
        start = 0
        for _ in range(4 * len(self.tv) + 16):
            v = self.tv[t]
            moved = False
            for k in range(3):
                e = (start + k) % 3
                a, b = v[(e + 1) % 3], v[(e + 2) % 3]
                if orient2d(X[a], Y[a], X[b], Y[b], px, py) < -PRED_EPS:
                    nb = self.tn[t][e]
                    if nb >= 0:
                        t = nb
                        moved = True
                        break
            if not moved:
                return t
            start = (start + 1) % 3
        # walk failed to converge, fall back to a scan
        for t, v in enumerate(self.tv):
            if self.alive[t] and all(
                self.orient(v[(e + 1) % 3], v[(e + 2) % 3], p) >= -PRED_EPS for e in range(3)
            ):
                return t
        raise TriangulationError(f"could not locate point {p}")

    def in_circle(self, t: int, p: int) -> bool:
        X, Y = self.X, self.Y
        a, b, c = self.tv[t]
        return incircle(X[a], Y[a], X[b], Y[b], X[c], Y[c], X[p], Y[p]) > PRED_EPS

    def insert(self, p: int) -> None:
        t0 = self.locate(p)
        cavity = {t0}
        stack = [t0]
        while stack:
            t = stack.pop()
            for nb in self.tn[t]:
                if nb >= 0 and nb not in cavity and self.in_circle(nb, p):
                    cavity.add(nb)
                    stack.append(nb)

        # shrink until every boundary edge sees p strictly on its left
        pinned = {t0}
        while True:
            bad = None
            for t in sorted(cavity):
                v, nbs = self.tv[t], self.tn[t]
                for e in range(3):
                    if nbs[e] in cavity:
                        continue
                    if self.orient(v[(e + 1) % 3], v[(e + 2) % 3], p) <= PRED_EPS:
                        if t in pinned:
                            # p on an edge of its container: pull in the neighbour
                            if nbs[e] >= 0:
                                bad = ("add", nbs[e])
                                break
                            raise TriangulationError(f"point {p} outside triangulation")
                        bad = ("drop", t)
                        break
                if bad:
                    break
            if bad is None:
                break
            kind, t = bad
            if kind == "add":
                cavity.add(t)
                pinned.add(t)
                continue
            cavity.discard(t)
            # keep the cavity connected to t0
            seen = {t0}
            stack = [t0]
            while stack:
                u = stack.pop()
                for nb in self.tn[u]:
                    if nb in cavity and nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
            cavity = seen

        start: dict[int, int] = {}
        end: dict[int, int] = {}
        created = []
        for t in sorted(cavity):
            v, nbs = self.tv[t], self.tn[t]
            for e in range(3):
                nb = nbs[e]
                if nb in cavity:
                    continue
                u, w = v[(e + 1) % 3], v[(e + 2) % 3]
                nt = len(self.tv)
                self.tv.append([u, w, p])
                self.tn.append([-1, -1, nb])
                self.alive.append(True)
                if nb >= 0:
                    nv = self.tv[nb]
                    for j in range(3):
                        if nv[(j + 1) % 3] == w and nv[(j + 2) % 3] == u:
                            self.tn[nb][j] = nt
                            break
                start[u] = nt
                end[w] = nt
                created.append(nt)
        for nt in created:
            u, w, _ = self.tv[nt]
            self.tn[nt][0] = start[w]
            self.tn[nt][1] = end[u]
        for t in cavity:
            self.alive[t] = False
        self.last = created[-1]

    def real_triangles(self) -> list[tuple]:
        n = self.n
        return [
            tuple(v)
            for t, v in enumerate(self.tv)
            if self.alive[t] and v[0] < n and v[1] < n and v[2] < n
        ]


def _edge_map(tris: list) -> dict:
    em: dict = {}
    for t, (a, b, c) in enumerate(tris):
        for u, v in ((a, b), (b, c), (c, a)):
            em.setdefault((u, v) if u < v else (v, u), []).append(t)
    return em


def _boundary_next(tris: list, em: dict) -> dict:
    nxt = {}
    for (u, v), ts in em.items():
        if len(ts) == 1:
            a, b, c = tris[ts[0]]
            for s, e in ((a, b), (b, c), (c, a)):
                if {s, e} == {u, v}:
                    if s in nxt:
                        raise TriangulationError("triangulation boundary is not a simple loop")
                    nxt[s] = e
    return nxt


def _fill_pockets(X: list, Y: list, tris: list) -> list:
    """Close reflex dents along the boundary so it becomes the convex hull."""
    changed = True
    while changed:
        changed = False
        em = _edge_map(tris)
        nxt = _boundary_next(tris, em)
        prev = {b: a for a, b in nxt.items()}
        loop = list(nxt)
        for v in sorted(loop):
            u, w = prev[v], nxt[v]
            if orient2d(X[u], Y[u], X[v], Y[v], X[w], Y[w]) < -PRED_EPS:
                # ear (u, w, v) lies outside the current region
                blocked = False
                for z in loop:
                    if z in (u, v, w):
                        continue
                    if (
                        orient2d(X[u], Y[u], X[w], Y[w], X[z], Y[z]) > 0
                        and orient2d(X[w], Y[w], X[v], Y[v], X[z], Y[z]) > 0
                        and orient2d(X[v], Y[v], X[u], Y[u], X[z], Y[z]) > 0
                    ):
                        blocked = True
                        break
                if not blocked:
                    tris.append((u, w, v))
                    changed = True
                    break
    return tris


def _lawson(X: list, Y: list, tris: list) -> list:
    """Flip edges until every interior edge is locally Delaunay."""
    tris = [list(t) for t in tris]
    em = _edge_map(tris)
    stack = sorted(e for e, ts in em.items() if len(ts) == 2)
    stack.reverse()
    budget = 50 * (len(tris) + 10) ** 2
    while stack:
        budget -= 1
        if budget < 0:
            raise TriangulationError("edge flipping did not terminate")
        i, j = stack.pop()
        ts = em.get((i, j))
        if ts is None or len(ts) != 2:
            continue
        t1, t2 = ts
        # orient t1 as (i, j, k) and t2 as (j, i, l)
        a = tris[t1]
        r = a.index(i)
        if a[(r + 1) % 3] != j:
            t1, t2 = t2, t1
            a = tris[t1]
            r = a.index(i)
        k = a[(r + 2) % 3]
        b = tris[t2]
        l = b[(b.index(j) + 2) % 3]
        d = incircle(X[i], Y[i], X[j], Y[j], X[k], Y[k], X[l], Y[l])
        if d > PRED_EPS:
            flip = True
        elif d >= -PRED_EPS:
            flip = min(k, l) < min(i, j)
        else:
            flip = False
        if flip:
            # the new diagonal k-l must split a convex quad
            if not (
                orient2d(X[k], Y[k], X[i], Y[i], X[l], Y[l]) > PRED_EPS
                and orient2d(X[l], Y[l], X[j], Y[j], X[k], Y[k]) > PRED_EPS
            ):
                continue
            tris[t1] = [i, l, k]
            tris[t2] = [l, j, k]
            del em[(i, j)]
            em[(k, l) if k < l else (l, k)] = [t1, t2]
            e_il = (i, l) if i < l else (l, i)
            em[e_il] = [t1 if t == t2 else t for t in em[e_il]]
            e_jk = (j, k) if j < k else (k, j)
            em[e_jk] = [t2 if t == t1 else t for t in em[e_jk]]
            for e in (e_il, (l, j) if l < j else (j, l), e_jk, (k, i) if k < i else (i, k)):
                if len(em[e]) == 2:
                    stack.append(e)
    return [tuple(t) for t in tris]


def _canonical(t: tuple) -> tuple:
    r = t.index(min(t))
    return (t[r], t[(r + 1) % 3], t[(r + 2) % 3])


def triangulate(points) -> Triangulation:
    """Delaunay triangulation of ``points`` (shape ``(N, 2)``, N >= 3)."""
    pts = np.array(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise TriangulationError(f"expected an (N, 2) array, got shape {pts.shape}")
    n = len(pts)
    if n < 3:
        raise TriangulationError(f"need at least 3 sites, got {n}")
    if not np.all(np.isfinite(pts)):
        raise TriangulationError("site coordinates must be finite")

    lo = pts.min(axis=0)
    scale = float((pts.max(axis=0) - lo).max())
    if scale == 0.0:
        raise CollinearPointsError("all sites coincide")
    q = (pts - lo) / scale

    diag = float(np.hypot(*(q.max(axis=0) - q.min(axis=0))))
    pairs = cKDTree(q).query_pairs(DUP_EPS * diag, output_type="ndarray")
    if len(pairs):
        i, j = sorted(pairs.tolist())[0]
        raise DuplicatePointsError(i, j)

    far = int(np.argmax(np.hypot(q[:, 0] - q[0, 0], q[:, 1] - q[0, 1])))
    cross = (q[far, 0] - q[0, 0]) * (q[:, 1] - q[0, 1]) - (q[far, 1] - q[0, 1]) * (q[:, 0] - q[0, 0])
    if np.max(np.abs(cross)) <= PRED_EPS:
        raise CollinearPointsError("all sites are collinear")

    b = _Builder(q)
    for p in _brio_order(q):
        b.insert(p)
    tris = b.real_triangles()
    X, Y = b.X, b.Y
    tris = _fill_pockets(X, Y, tris)
    tris = _lawson(X, Y, tris)
    tris = sorted(_canonical(t) for t in tris)

    tri_arr = np.array(tris, dtype=np.int64).reshape(-1, 3)
    em = {e: tuple(ts) for e, ts in sorted(_edge_map(tris).items())}
    nxt = _boundary_next(tris, em)
    start = min(nxt)
    hull = [start]
    while nxt[hull[-1]] != start:
        hull.append(nxt[hull[-1]])
        if len(hull) > n:
            raise TriangulationError("hull loop is broken")

    border = []
    for s in hull:
        e = nxt[s]
        t = em[(s, e) if s < e else (e, s)][0]
        k = next(v for v in tris[t] if v != s and v != e)
        border.append((s, e, k))

    site_tris: list[list[int]] = [[] for _ in range(n)]
    for t, tri in enumerate(tris):
        for v in tri:
            site_tris[v].append(t)

    return Triangulation(
        points=pts,
        triangles=tri_arr,
        edge_adjacency=em,
        hull=hull,
        border=border,
        site_triangles=site_tris,
    )


def border_edges(tri: Triangulation) -> list:
    """Hull edges as ``((i, j), outward_ref)`` where ``outward_ref`` is the
    index of the third vertex of the edge's only triangle."""
    return [((i, j), k) for i, j, k in tri.border]


def triangles_adjacent_to_site(tri: Triangulation, site: int) -> list[int]:
    """Triangles incident to ``site`` in CCW order, found by walking shared
    edges. A hull site's open fan starts at the triangle on its outgoing hull
    edge and ends at the one on its incoming hull edge; a closed fan starts
    at its lowest triangle index."""
    ts = tri.site_triangles[site]
    if not ts:
        return []

    def after(t):
        # triangle (site, a, b) is CCW; the next one CCW shares edge site-b
        v = tri.triangles[t].tolist()
        k = v.index(site)
        return v[(k + 2) % 3]

    start = min(ts)
    for i, j, _ in tri.border:
        if i == site:
            start = tri.edge_adjacency[(i, j) if i < j else (j, i)][0]
            break
    fan = [start]
    while len(fan) < len(ts):
        b = after(fan[-1])
        nxt = [u for u in tri.edge_adjacency[(site, b) if site < b else (b, site)] if u != fan[-1]]
        if not nxt or nxt[0] == start:
            break
        fan.append(nxt[0])
    if len(fan) != len(ts):
        raise TriangulationError(f"fan around site {site} is not a single strip")
    return fan
