"""Flat multi-domains and their developed geometry.

A multi-domain is a simply connected triangulated flat surface together
with a developing map into the plane (a local isometry).  It generalizes
a plane domain: the developed image may overlap itself, so sectors of
total angle above 2*pi and immersed polygonal disks are representable.
The triangulation is abstract (connectivity decides adjacency, not
coordinates); the developing map is stored per vertex and restricts to
an isometric embedding of every single triangle.

Conventions:
  * triangles are counterclockwise in developed coordinates;
  * boundary edges are directed with the interior on their left, so the
    boundary cycle runs counterclockwise;
  * an arc is "straight" when all its interior turns vanish; only
    straight arcs may carry infinite boundary data downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import (
    DegeneratePolygon,
    InconsistentIsometry,
    NonConvexArc,
    NotSimplyConnected,
    SelfIntersecting,
    UnbalancedFlux,
)

# Relative tolerance for geometric identities (isometry residuals,
# flux balance, convexity cross products).
GEOM_TOL = 1e-12


# =============================================================================
# small planar helpers
# =============================================================================

def rot90(v):
    """Rotate vectors by +90 degrees: (x, y) -> (-y, x)."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def cross2(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def segments_intersect(p1, p2, q1, q2, eps: float = 1e-12) -> bool:
    """Whether closed segments [p1,p2] and [q1,q2] intersect."""
    p1 = np.asarray(p1, float)
    p2 = np.asarray(p2, float)
    q1 = np.asarray(q1, float)
    q2 = np.asarray(q2, float)
    scale = max(float(np.abs(np.vstack([p1, p2, q1, q2])).max()), 1.0)
    tol = eps * scale * scale

    d1 = cross2(p2 - p1, q1 - p1)
    d2 = cross2(p2 - p1, q2 - p1)
    d3 = cross2(q2 - q1, p1 - q1)
    d4 = cross2(q2 - q1, p2 - q1)

    if ((d1 > tol and d2 > tol) or (d1 < -tol and d2 < -tol)
            or (d3 > tol and d4 > tol) or (d3 < -tol and d4 < -tol)):
        return False
    if abs(d1) <= tol and abs(d2) <= tol:
        # collinear: 1D overlap test along the carrier line
        t = p2 - p1
        tt = float(t @ t)
        if tt <= tol:
            return float(np.linalg.norm(q1 - p1)) <= tol or \
                float(np.linalg.norm(q2 - p1)) <= tol
        s = sorted([float((q1 - p1) @ t), float((q2 - p1) @ t)])
        return s[1] >= -tol and s[0] <= tt + tol
    return True


def polygon_is_simple(points) -> bool:
    """Whether the closed polygon through `points` avoids self-intersection."""
    pts = np.asarray(points, float)
    n = len(pts)
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == (i + 1) % n or (j + 1) % n == i:
                continue
            if segments_intersect(a1, a2, pts[j], pts[(j + 1) % n]):
                return False
    return True


def point_in_polygon(point, polygon, eps: float = 1e-12) -> int:
    """Winding test: 1 strictly inside, 0 on the boundary, -1 outside."""
    x, y = float(point[0]), float(point[1])
    pts = np.asarray(polygon, float)
    n = len(pts)
    wn = 0
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        d = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        seg_scale = max(1.0, abs(x2 - x1) + abs(y2 - y1))
        if abs(d) <= eps * seg_scale * max(1.0, abs(x) + abs(y)):
            if min(x1, x2) - eps <= x <= max(x1, x2) + eps and \
               min(y1, y2) - eps <= y <= max(y1, y2) + eps:
                return 0
        if y1 <= y:
            if y2 > y and d > 0:
                wn += 1
        else:
            if y2 <= y and d < 0:
                wn -= 1
    return 1 if wn != 0 else -1


def polygon_area(points) -> float:
    pts = np.asarray(points, float)
    n = len(pts)
    return 0.5 * sum(cross2(pts[i], pts[(i + 1) % n]) for i in range(n))


# =============================================================================
# boundary arcs
# =============================================================================

@dataclass(frozen=True)
class BoundaryArc:
    """One labeled run of directed boundary edges, interior on the left."""

    label: str
    edges: tuple  # of (u, v) vertex pairs, consecutive

    @property
    def vertices(self) -> list[int]:
        chain = [self.edges[0][0]]
        chain.extend(e[1] for e in self.edges)
        return [int(v) for v in chain]

    @property
    def start(self) -> int:
        return int(self.edges[0][0])

    @property
    def end(self) -> int:
        return int(self.edges[-1][1])


# =============================================================================
# MultiDomain
# =============================================================================

class MultiDomain:
    """Triangulated flat simply connected surface with developing map.

    Parameters
    ----------
    points : (n, 2) float array
        Developed image of every vertex.  Adjacent triangles share
        vertices and hence glue isometrically; distant triangles may
        overlap in the plane (immersed domains).
    triangles : (m, 3) int array
        Counterclockwise vertex index triples.
    boundary_arcs : iterable of BoundaryArc or (label, edges)
        Partition of the boundary cycle into labeled arcs, in boundary
        order.  Arc endpoints become the domain vertices.
    domain_vertices : optional list of vertex ids
        Boundary points where smoothness fails; defaults to arc endpoints.

    Instances are immutable after construction and safe to share.
    """

    def __init__(self, points, triangles, boundary_arcs, domain_vertices=None,
                 validate: bool = True, meta: dict | None = None):
        self.points = np.array(points, dtype=float)
        self.triangles = np.array(triangles, dtype=np.int64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("points must be (n, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be (m, 3)")
        self.boundary_arcs = [
            a if isinstance(a, BoundaryArc)
            else BoundaryArc(a[0], tuple((int(u), int(v)) for u, v in a[1]))
            for a in boundary_arcs
        ]
        self.meta = dict(meta or {})

        self._build_connectivity()
        if domain_vertices is None:
            domain_vertices = [a.start for a in self.boundary_arcs]
        self.domain_vertices = list(dict.fromkeys(int(v) for v in domain_vertices))

        if validate:
            self._validate()
        self.points.flags.writeable = False
        self.triangles.flags.writeable = False

    # -- construction internals -----------------------------------------------

    def _build_connectivity(self):
        tris = self.triangles
        m = len(tris)
        edge_tris: dict[tuple[int, int], list[int]] = {}
        for t in range(m):
            i, j, k = (int(v) for v in tris[t])
            for a, b in ((i, j), (j, k), (k, i)):
                key = (a, b) if a < b else (b, a)
                edge_tris.setdefault(key, []).append(t)
        self.edge_tris = edge_tris
        overshared = [e for e, ts in edge_tris.items() if len(ts) > 2]
        if overshared:
            raise NotSimplyConnected(f"non-manifold edges: {overshared[:4]}")

        self.boundary_edges: set[tuple[int, int]] = set()
        for t in range(m):
            i, j, k = (int(v) for v in tris[t])
            for a, b in ((i, j), (j, k), (k, i)):
                key = (a, b) if a < b else (b, a)
                if len(edge_tris[key]) == 1:
                    self.boundary_edges.add((a, b))
        self.is_boundary_vertex = np.zeros(len(self.points), dtype=bool)
        for a, b in self.boundary_edges:
            self.is_boundary_vertex[a] = True
            self.is_boundary_vertex[b] = True

        self.vertex_tris: list[list[int]] = [[] for _ in range(len(self.points))]
        for t in range(m):
            for v in tris[t]:
                self.vertex_tris[int(v)].append(t)

        p = self.points
        d1 = p[tris[:, 1]] - p[tris[:, 0]]
        d2 = p[tris[:, 2]] - p[tris[:, 0]]
        self.tri_areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def _validate(self):
        referenced = np.zeros(len(self.points), dtype=bool)
        referenced[self.triangles.ravel()] = True
        if not referenced.all():
            raise InconsistentIsometry("unreferenced vertices present")
        n_v = len(self.points)
        n_e = len(self.edge_tris)
        n_f = len(self.triangles)
        chi = n_v - n_e + n_f
        if chi != 1:
            raise NotSimplyConnected(f"Euler characteristic {chi} != 1")

        scale2 = max(float(np.abs(self.tri_areas).max()), GEOM_TOL)
        if np.any(self.tri_areas <= GEOM_TOL * scale2):
            bad = int(np.argmin(self.tri_areas))
            raise InconsistentIsometry(
                f"triangle {bad} degenerate or clockwise (area {self.tri_areas[bad]:.3e})")

        self._validate_flat_interior()
        self._validate_boundary_arcs()
        self._validate_convexity()

    def _validate_flat_interior(self):
        """Interior vertices carry total angle 2*pi (no cone points)."""
        angles = triangle_angles(self.points, self.triangles)
        total = np.zeros(len(self.points))
        for loc in range(3):
            np.add.at(total, self.triangles[:, loc], angles[:, loc])
        interior = ~self.is_boundary_vertex
        bad = interior & (np.abs(total - 2 * np.pi) > 1e-8)
        if bad.any():
            v = int(np.nonzero(bad)[0][0])
            raise InconsistentIsometry(
                f"interior vertex {v} has cone angle {total[v]:.12f} != 2*pi")

    def _validate_boundary_arcs(self):
        declared = [e for arc in self.boundary_arcs for e in arc.edges]
        declared_set = {(int(a), int(b)) for a, b in declared}
        if declared_set != self.boundary_edges or len(declared) != len(self.boundary_edges):
            missing = self.boundary_edges - declared_set
            extra = declared_set - self.boundary_edges
            raise InconsistentIsometry(
                f"boundary arcs must cover the boundary exactly once "
                f"(missing {list(missing)[:4]}, extra {list(extra)[:4]})")
        for k in range(len(declared)):
            a = declared[k]
            b = declared[(k + 1) % len(declared)]
            if a[1] != b[0]:
                raise InconsistentIsometry(
                    f"boundary arcs are not a consecutive cycle at edge {a} -> {b}")

    def _validate_convexity(self):
        p = self.points
        for arc in self.boundary_arcs:
            for e1, e2 in zip(arc.edges[:-1], arc.edges[1:]):
                v1 = p[e1[1]] - p[e1[0]]
                v2 = p[e2[1]] - p[e2[0]]
                c = cross2(v1, v2)
                lim = -1e-10 * float(np.linalg.norm(v1) * np.linalg.norm(v2))
                if c < lim:
                    raise NonConvexArc(
                        f"arc {arc.label!r} bends away from the interior at vertex {e1[1]}",
                        edge_pair=(tuple(e1), tuple(e2)))

    # -- queries ----------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def area(self) -> float:
        return float(self.tri_areas.sum())

    def diameter(self) -> float:
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def edge_length(self, u: int, v: int) -> float:
        return float(np.linalg.norm(self.points[u] - self.points[v]))

    def min_edge_length(self) -> float:
        return min(self.edge_length(a, b) for a, b in self.edge_tris)

    def mean_edge_length(self) -> float:
        return float(np.mean([self.edge_length(a, b) for a, b in self.edge_tris]))

    def mesh_size(self) -> float:
        return float(self.meta.get("h", self.mean_edge_length()))

    def arc(self, label: str) -> BoundaryArc:
        for a in self.boundary_arcs:
            if a.label == label:
                return a
        raise KeyError(f"no boundary arc labeled {label!r}")

    def arc_length(self, arc) -> float:
        if isinstance(arc, str):
            arc = self.arc(arc)
        p = self.points
        return float(sum(np.linalg.norm(p[b] - p[a]) for a, b in arc.edges))

    def arc_is_straight(self, arc, tol: float = 1e-9) -> bool:
        if isinstance(arc, str):
            arc = self.arc(arc)
        p = self.points
        chain = arc.vertices
        if len(chain) < 3:
            return True
        d = p[chain[-1]] - p[chain[0]]
        nrm = float(np.linalg.norm(d))
        if nrm == 0:
            return False
        for v in chain[1:-1]:
            if abs(cross2(d / nrm, p[v] - p[chain[0]])) > tol * nrm:
                return False
        return True

    def boundary_cycle(self) -> list[tuple[int, int]]:
        return [tuple(e) for arc in self.boundary_arcs for e in arc.edges]

    def tri_neighbor(self, tri: int, u: int, v: int) -> int:
        """Triangle across edge (u, v) from tri, or -1 on the boundary."""
        key = (u, v) if u < v else (v, u)
        for t in self.edge_tris[key]:
            if t != tri:
                return t
        return -1

    def interior_vertices(self) -> np.ndarray:
        return np.nonzero(~self.is_boundary_vertex)[0]

    def centroids(self) -> np.ndarray:
        return self.points[self.triangles].mean(axis=1)

    def locate(self, pts, tol: float = 1e-9):
        """Locate developed points: (triangle index or -1, barycentric coords).

        Nearest-centroid candidates with a barycentric test; on immersed
        domains the returned triangle is some sheet containing the point.
        """
        pts = np.atleast_2d(np.asarray(pts, float))
        cents = self.centroids()
        tree = cKDTree(cents)
        k = min(48, len(cents))
        _, cand = tree.query(pts, k=k)
        cand = np.atleast_2d(cand)
        tri_idx = np.full(len(pts), -1, dtype=int)
        bary = np.zeros((len(pts), 3))
        for i, q in enumerate(pts):
            for t in cand[i]:
                a, b, c = self.points[self.triangles[t]]
                m = np.column_stack([b - a, c - a])
                det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
                if abs(det) < 1e-30:
                    continue
                lam = np.linalg.solve(m, np.asarray(q, float) - a)
                l0 = 1.0 - lam.sum()
                if l0 >= -tol and lam[0] >= -tol and lam[1] >= -tol:
                    tri_idx[i] = t
                    bary[i] = (l0, lam[0], lam[1])
                    break
        return tri_idx, bary


def triangle_angles(points, triangles) -> np.ndarray:
    """Interior angles of each triangle at its three vertices, shape (m, 3)."""
    p = points[triangles]
    out = np.empty((len(triangles), 3))
    for loc in range(3):
        a = p[:, loc]
        b = p[:, (loc + 1) % 3]
        c = p[:, (loc + 2) % 3]
        u = b - a
        v = c - a
        dot = (u * v).sum(axis=1)
        crs = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        out[:, loc] = np.arctan2(np.abs(crs), dot)
    return out


# =============================================================================
# chart-based construction
# =============================================================================

def transition_from_edge(src_pts, dst_pts):
    """Orientation-preserving plane isometry taking one segment onto another.

    Returns (R, t) with R a rotation matrix such that R @ src + t = dst for
    both endpoints; the endpoint pairs must be equidistant.
    """
    s0, s1 = np.asarray(src_pts, float)
    d0, d1 = np.asarray(dst_pts, float)
    vs = s1 - s0
    vd = d1 - d0
    ls = float(np.linalg.norm(vs))
    ld = float(np.linalg.norm(vd))
    if ls == 0 or ld == 0:
        raise InconsistentIsometry("zero-length edge in transition")
    if abs(ls - ld) > 1e-9 * max(ls, ld):
        raise InconsistentIsometry(f"edge lengths differ: {ls!r} vs {ld!r}")
    c = float(vs @ vd) / (ls * ld)
    s = cross2(vs, vd) / (ls * ld)
    rot = np.array([[c, -s], [s, c]])
    t = d0 - rot @ s0
    return rot, t


def build_multidomain(charts, transitions=None, boundary_arcs=None,
                      domain_vertices=None, tol: float = 1e-12) -> MultiDomain:
    """Develop per-triangle charts into a MultiDomain.

    Parameters
    ----------
    charts : (triangles, coords)
        `triangles` is (m, 3) global vertex ids; `coords` is (m, 3, 2), each
        chart's own planar coordinates for its three corners.
    transitions : optional {(i, j): (R, t)}
        Isometry from chart i coordinates into chart j coordinates for
        adjacent triangles.  Transitions are already implied by the shared
        edge; given ones are checked against the implied ones.
    boundary_arcs : labeled boundary edges, as for MultiDomain.

    The developing map is computed by breadth-first propagation over a
    spanning tree of the dual graph; on a simply connected complex the
    result is path independent.  Every chart must land congruently
    (isometry residual below `tol` relative to the chart scale).
    """
    triangles = np.asarray(charts[0], dtype=np.int64)
    coords = np.asarray(charts[1], dtype=float)
    m = len(triangles)
    if coords.shape != (m, 3, 2):
        raise ValueError("chart coords must be (m, 3, 2)")

    edge_tris: dict[tuple[int, int], list[int]] = {}
    for t in range(m):
        i, j, k = (int(v) for v in triangles[t])
        for a, b in ((i, j), (j, k), (k, i)):
            key = (a, b) if a < b else (b, a)
            edge_tris.setdefault(key, []).append(t)

    n = int(triangles.max()) + 1
    points = np.full((n, 2), np.nan)
    placed = np.zeros(m, dtype=bool)
    scale = max(float(np.abs(coords).max()), 1.0)

    def place(t, rot, tr):
        for loc in range(3):
            v = int(triangles[t, loc])
            pos = rot @ coords[t, loc] + tr
            if np.isnan(points[v, 0]):
                points[v] = pos
            elif np.linalg.norm(points[v] - pos) > 1e4 * tol * scale:
                raise InconsistentIsometry(
                    f"vertex {v} develops to two positions ({points[v]} vs {pos})")

    place(0, np.eye(2), np.zeros(2))
    placed[0] = True
    queue = [0]
    while queue:
        t = queue.pop(0)
        i, j, k = (int(v) for v in triangles[t])
        for a, b in ((i, j), (j, k), (k, i)):
            key = (a, b) if a < b else (b, a)
            for t2 in edge_tris[key]:
                if placed[t2]:
                    continue
                loc2 = [int(np.nonzero(triangles[t2] == v)[0][0]) for v in (a, b)]
                rot, tr = transition_from_edge(coords[t2, loc2], points[[a, b]])
                place(t2, rot, tr)
                placed[t2] = True
                queue.append(t2)
    if not placed.all():
        raise NotSimplyConnected("triangulation is not connected")

    for t in range(m):
        d = points[triangles[t]]
        c = coords[t]
        for (u, v) in ((0, 1), (1, 2), (2, 0)):
            ld = float(np.linalg.norm(d[u] - d[v]))
            lc = float(np.linalg.norm(c[u] - c[v]))
            if abs(ld - lc) > 10 * tol * scale:
                raise InconsistentIsometry(
                    f"triangle {t} developed image not congruent to its chart "
                    f"(edge {u}-{v}: {ld!r} vs {lc!r})")

    if transitions:
        for (i, j), (rot, tr) in transitions.items():
            shared = sorted(set(map(int, triangles[i])) & set(map(int, triangles[j])))
            if len(shared) != 2:
                raise InconsistentIsometry(f"triangles {i}, {j} are not adjacent")
            a, b = shared
            loc_i = [int(np.nonzero(triangles[i] == v)[0][0]) for v in (a, b)]
            loc_j = [int(np.nonzero(triangles[j] == v)[0][0]) for v in (a, b)]
            r_imp, t_imp = transition_from_edge(coords[i, loc_i], coords[j, loc_j])
            if (np.abs(np.asarray(rot, float) - r_imp).max() > 1e-9
                    or np.abs(np.asarray(tr, float) - t_imp).max() > 1e-9 * scale):
                raise InconsistentIsometry(
                    f"declared transition {i}->{j} conflicts with the shared edge")

    return MultiDomain(points, triangles, boundary_arcs,
                       domain_vertices=domain_vertices)


def star_holonomy_residual(dom: MultiDomain, vertex: int) -> float:
    """Compose shared-edge transitions around an interior vertex star.

    Developing a closed loop of triangles on a simply connected flat
    surface must compose to the identity; returns the deviation.
    """
    if dom.is_boundary_vertex[vertex]:
        raise ValueError("holonomy loop needs an interior vertex")
    tris = list(dom.vertex_tris[vertex])
    ordered = [tris.pop(0)]
    while tris:
        cur = ordered[-1]
        nxt = None
        for t in tris:
            shared = set(map(int, dom.triangles[cur])) & set(map(int, dom.triangles[t]))
            if len(shared) == 2 and vertex in shared:
                nxt = t
                break
        if nxt is None:
            break
        ordered.append(nxt)
        tris.remove(nxt)

    rot = np.eye(2)
    tr = np.zeros(2)
    p = dom.points
    loop = ordered + [ordered[0]]
    for a, b in zip(loop[:-1], loop[1:]):
        shared = sorted(set(map(int, dom.triangles[a])) & set(map(int, dom.triangles[b])))
        r2, t2 = transition_from_edge(p[shared], p[shared])
        rot = r2 @ rot
        tr = r2 @ tr + t2
    return float(np.abs(rot - np.eye(2)).max() + np.abs(tr).max())


# =============================================================================
# structured meshes
# =============================================================================

def _stitch_rows(low_ids, low_params, high_ids, high_params):
    """Triangulate between two parameter-sorted vertex rows.

    Both rows run in the same direction and the high row lies to the
    RIGHT of the low row's direction; emitted triangles are ccw.
    """
    tris = []
    i, j = 0, 0
    nl, nh = len(low_ids), len(high_ids)
    while i < nl - 1 or j < nh - 1:
        if j == nh - 1:
            adv_low = True
        elif i == nl - 1:
            adv_low = False
        else:
            adv_low = low_params[i + 1] <= high_params[j + 1]
        if adv_low:
            tris.append((low_ids[i], high_ids[j], low_ids[i + 1]))
            i += 1
        else:
            tris.append((low_ids[i], high_ids[j], high_ids[j + 1]))
            j += 1
    return tris


def mesh_rectangle(lx: float, ly: float, h: float, *, origin=(0.0, 0.0),
                   labels=("bottom", "right", "top", "left"),
                   pattern: str = "alternating") -> MultiDomain:
    """Structured mesh of [0,lx] x [0,ly] + origin.

    pattern="alternating" splits cells along checkerboard diagonals:
    symmetric under both midline reflections, all triangles right
    isoceles, hence nonobtuse.  pattern="unionjack" adds cell centers
    (four triangles per cell), which is additionally symmetric under
    quarter turns of a square; degenerate variational problems (the
    Jenkins-Serrin equality cases) need that full symmetry, since any
    mesh bias tilts their flat minimizing valley.
    """
    nx = max(1, round(lx / h))
    ny = max(1, round(ly / h))
    xs = np.linspace(0.0, lx, nx + 1) + origin[0]
    ys = np.linspace(0.0, ly, ny + 1) + origin[1]
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    if pattern == "unionjack":
        points = points.tolist()
        for i in range(nx):
            for j in range(ny):
                a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
                center = len(points)
                points.append([(xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2])
                tris.extend([(a, b, center), (b, c, center),
                             (c, d, center), (d, a, center)])
        points = np.asarray(points)
    else:
        for i in range(nx):
            for j in range(ny):
                a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
                if (i + j) % 2 == 0:
                    tris.extend([(a, b, c), (a, c, d)])
                else:
                    tris.extend([(a, b, d), (b, c, d)])

    bottom = tuple((vid(i, 0), vid(i + 1, 0)) for i in range(nx))
    right = tuple((vid(nx, j), vid(nx, j + 1)) for j in range(ny))
    top = tuple((vid(nx - i, ny), vid(nx - i - 1, ny)) for i in range(nx))
    left = tuple((vid(0, ny - j), vid(0, ny - j - 1)) for j in range(ny))
    arcs = [BoundaryArc(labels[0], bottom), BoundaryArc(labels[1], right),
            BoundaryArc(labels[2], top), BoundaryArc(labels[3], left)]
    dom = MultiDomain(points, tris, arcs)
    dom.meta["h"] = max(lx / nx, ly / ny)
    dom.meta["shape"] = ("rectangle", lx, ly, origin[0], origin[1])
    dom.meta["grid"] = (nx, ny)
    return dom


def mesh_square(side: float, h: float, *, centered: bool = True,
                labels=("bottom", "right", "top", "left"),
                pattern: str = "alternating") -> MultiDomain:
    origin = (-side / 2, -side / 2) if centered else (0.0, 0.0)
    return mesh_rectangle(side, side, h, origin=origin, labels=labels,
                          pattern=pattern)


@dataclass(frozen=True)
class SectorDomain:
    """Circular sector 0 <= r <= R, beta1 <= theta <= beta2 in the cone metric.

    The developing map (r, theta) -> (r cos theta, r sin theta) is a local
    isometry for dr^2 + r^2 dtheta^2; the angular width may exceed 2*pi,
    in which case the developed image overlaps itself.  All points with
    r = 0 are identified into the apex vertex.
    """

    beta1: float
    beta2: float
    radius: float

    def __post_init__(self):
        if not self.beta2 > self.beta1:
            raise ValueError("need beta1 < beta2")
        if self.radius <= 0:
            raise ValueError("need R > 0")

    def mesh(self, h: float) -> MultiDomain:
        """Polar grid: an apex fan plus quad rings split along alternating
        diagonals.  Uses an even angular count so the bisector is a grid line.
        """
        beta1, beta2, R = self.beta1, self.beta2, self.radius
        n_r = max(2, round(R / h))
        n_t = max(2, round((beta2 - beta1) * R / h))
        if n_t % 2 == 1:
            n_t += 1
        radii = np.linspace(0.0, R, n_r + 1)
        thetas = np.linspace(beta1, beta2, n_t + 1)

        ids = {}
        pts = [(0.0, 0.0)]
        polar = [(0.0, 0.5 * (beta1 + beta2))]
        ids[(0, 0)] = 0
        for i in range(1, n_r + 1):
            for j in range(n_t + 1):
                ids[(i, j)] = len(pts)
                r, th = radii[i], thetas[j]
                pts.append((r * np.cos(th), r * np.sin(th)))
                polar.append((r, th))

        tris = []
        for j in range(n_t):
            tris.append((0, ids[(1, j)], ids[(1, j + 1)]))
        for i in range(1, n_r):
            for j in range(n_t):
                a, b = ids[(i, j)], ids[(i + 1, j)]
                c, d = ids[(i + 1, j + 1)], ids[(i, j + 1)]
                if (i + j) % 2 == 0:
                    tris.extend([(a, b, c), (a, c, d)])
                else:
                    tris.extend([(a, b, d), (b, c, d)])

        ray1 = [(0, ids[(1, 0)])] + [(ids[(i, 0)], ids[(i + 1, 0)]) for i in range(1, n_r)]
        outer = [(ids[(n_r, j)], ids[(n_r, j + 1)]) for j in range(n_t)]
        ray2 = [(ids[(n_r - i, n_t)], ids[(n_r - i - 1, n_t)]) for i in range(n_r - 1)]
        ray2.append((ids[(1, n_t)], 0))
        arcs = [BoundaryArc("ray1", tuple(ray1)),
                BoundaryArc("outer", tuple(outer)),
                BoundaryArc("ray2", tuple(ray2))]
        dom = MultiDomain(np.asarray(pts), tris, arcs)
        dom.meta["h"] = max(R / n_r, (beta2 - beta1) * R / n_t)
        dom.meta["polar"] = np.asarray(polar)
        dom.meta["shape"] = ("sector", beta1, beta2, R)
        dom.meta["apex"] = 0
        return dom


# =============================================================================
# flux polygons and polygonal disks
# =============================================================================

@dataclass(frozen=True)
class FluxPolygon:
    """Closed polygon traced by drawing flux vectors consecutively."""

    vectors: np.ndarray  # (r, 2)
    degenerate: bool = False

    @property
    def r(self) -> int:
        return len(self.vectors)

    @property
    def corners(self) -> np.ndarray:
        c = np.vstack([[0.0, 0.0], np.cumsum(self.vectors, axis=0)])
        return c[:-1]

    def is_simple(self) -> bool:
        return not self.degenerate and polygon_is_simple(self.corners)

    def scaled(self, lam: float) -> "FluxPolygon":
        return FluxPolygon(self.vectors * lam, degenerate=self.degenerate)


def flux_polygon_from_vectors(vectors) -> FluxPolygon:
    """Validate the balancing condition and build the flux polygon.

    The vectors must sum to zero within 1e-12 of the total length; a
    closed polygon enclosing no area is accepted but flagged degenerate.
    """
    v = np.asarray(vectors, dtype=float).reshape(-1, 2)
    if len(v) < 2:
        raise DegeneratePolygon("need at least two flux vectors")
    lens = np.linalg.norm(v, axis=1)
    scale = float(lens.sum())
    if scale == 0 or lens.min() == 0:
        raise DegeneratePolygon("zero-length flux vector")
    total = float(np.abs(v.sum(axis=0)).max())
    if total > 1e-12 * scale:
        raise UnbalancedFlux(f"flux vectors sum to {v.sum(axis=0).tolist()}, not zero")
    corners = np.vstack([[0.0, 0.0], np.cumsum(v, axis=0)])[:-1]
    degenerate = len(v) < 3 or abs(polygon_area(corners)) < 1e-12 * scale ** 2
    return FluxPolygon(v, degenerate=degenerate)


@dataclass
class PolygonalDisk:
    """Compact multi-domain whose boundary realizes a flux polygon."""

    domain: MultiDomain
    corner_ids: list[int]         # P_1..P_r vertex ids
    side_chains: list[list[int]]  # boundary vertex chain of side i, P_i -> P_{i+1}

    @property
    def r(self) -> int:
        return len(self.corner_ids)

    def side_vector(self, i: int) -> np.ndarray:
        p = self.domain.points
        return p[self.corner_ids[(i + 1) % self.r]] - p[self.corner_ids[i]]

    def side_length(self, i: int) -> float:
        return float(np.linalg.norm(self.side_vector(i)))

    def corner_points(self) -> np.ndarray:
        return self.domain.points[self.corner_ids]


def _dist_to_polygon_boundary(q, corners):
    d = np.inf
    n = len(corners)
    for i in range(n):
        a, b = corners[i], corners[(i + 1) % n]
        ab2 = float((b - a) @ (b - a))
        t = np.clip(float((q - a) @ (b - a)) / max(ab2, 1e-30), 0.0, 1.0)
        d = min(d, float(np.linalg.norm(q - (a + t * (b - a)))))
    return d


def find_embedded_disk(poly: FluxPolygon, h: float | None = None,
                       seed: int | None = None) -> PolygonalDisk:
    """Triangulate the planar region enclosed by a simple flux polygon.

    The developing map is the identity (an embedded disk).  Immersed
    disks of self-crossing polygons must be supplied explicitly through
    build_multidomain.  `seed` jitters interior mesh points slightly, for
    cross-mesh comparisons.
    """
    if poly.degenerate:
        raise DegeneratePolygon("flux polygon encloses no area")
    corners = poly.corners
    if not polygon_is_simple(corners):
        raise SelfIntersecting(
            "flux polygon is self-crossing; supply an immersed disk explicitly")
    if polygon_area(corners) < 0:
        raise DegeneratePolygon("flux polygon must be counterclockwise")
    r = len(corners)
    side_lens = [float(np.linalg.norm(corners[(i + 1) % r] - corners[i])) for i in range(r)]
    if h is None:
        h = min(side_lens) / 20.0

    bnd_pts = []
    side_slices = []
    for i in range(r):
        a, b = corners[i], corners[(i + 1) % r]
        nseg = max(2, round(side_lens[i] / h))
        start = len(bnd_pts)
        for k in range(nseg):
            bnd_pts.append(a + (b - a) * (k / nseg))
        side_slices.append((start, nseg))
    bnd_pts = np.asarray(bnd_pts)
    nb = len(bnd_pts)

    rng = np.random.default_rng(seed)
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    row_h = h * np.sqrt(3) / 2
    inner = []
    ys = np.arange(lo[1] + 0.6 * row_h, hi[1] - 0.2 * row_h, row_h)
    for jy, y in enumerate(ys):
        off = 0.5 * h if jy % 2 else 0.0
        for x in np.arange(lo[0] + 0.3 * h + off, hi[0], h):
            q = np.array([x, y])
            if seed is not None:
                q = q + rng.uniform(-0.15 * h, 0.15 * h, size=2)
            if point_in_polygon(q, corners) != 1:
                continue
            if _dist_to_polygon_boundary(q, corners) > 0.55 * h:
                inner.append(q)
    pts = np.vstack([bnd_pts] + ([np.asarray(inner)] if inner else []))

    dela = Delaunay(pts)
    keep = []
    for t in dela.simplices:
        cen = pts[t].mean(axis=0)
        if point_in_polygon(cen, corners) == 1:
            keep.append([int(v) for v in t])
    tris = np.asarray(keep, dtype=np.int64)
    d1 = pts[tris[:, 1]] - pts[tris[:, 0]]
    d2 = pts[tris[:, 2]] - pts[tris[:, 0]]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    used = np.unique(tris)
    remap = -np.ones(len(pts), dtype=int)
    remap[used] = np.arange(len(used))
    if not np.all(remap[:nb] >= 0):
        raise DegeneratePolygon("polygon too thin for this mesh size; reduce h")
    pts = pts[used]
    tris = remap[tris]

    arcs = []
    side_chains = []
    for i, (start, nseg) in enumerate(side_slices):
        chain = [int(remap[start + k]) for k in range(nseg)]
        chain.append(int(remap[(start + nseg) % nb]))
        side_chains.append(chain)
        arcs.append(BoundaryArc(f"side{i}",
                                tuple((chain[k], chain[k + 1]) for k in range(nseg))))

    dom = MultiDomain(pts, tris, arcs)
    dom.meta["h"] = h
    dom.meta["shape"] = ("polygon", r)
    corner_ids = [int(remap[side_slices[i][0]]) for i in range(r)]
    disk = PolygonalDisk(dom, corner_ids, side_chains)
    for i in range(r):
        dev = disk.side_vector(i)
        if np.linalg.norm(dev - poly.vectors[i]) > 1e-9 * max(1.0, side_lens[i]):
            raise InconsistentIsometry(
                f"disk side {i} develops to {dev}, flux vector is {poly.vectors[i]}")
    return disk


# =============================================================================
# Omega(P): disk with glued half-strips
# =============================================================================

def strip_height_ladder(h: float, grading: float = 1.0):
    """Mesh-row heights 0 = y0 < y1 < ... with dy_j = h (1 + grading y_j).

    The geometric growth puts fine rows at the glued side and coarse rows
    far out, matching the 1/x decay of the far-strip gradient estimates.
    The ladder does not depend on the truncation length, so truncations at
    ladder heights nest as submeshes.
    """
    y = 0.0
    while True:
        yield y
        y += h * (1.0 + grading * y)


@dataclass
class OmegaP:
    """A polygonal disk with a truncated half-strip glued to each side.

    The strip over side i is isometric to [P_i, P_{i+1}] x [0, l]; its
    sides are the rays L_i^+ (leaving P_i) and L_{i+1}^- (ending at
    P_{i+1}), and the far cap at height l closes the truncation.
    """

    domain: MultiDomain
    disk: PolygonalDisk
    l: float
    n_disk_vertices: int
    strip_of_vertex: np.ndarray   # -1 on the disk, else strip index
    height_of_vertex: np.ndarray  # 0 on the disk, else distance from the glued side


def build_omega_p(disk: PolygonalDisk, l: float, grading: float = 1.0) -> OmegaP:
    """Glue a graded half-strip of length l to each side of the disk."""
    if disk.r < 3:
        raise DegeneratePolygon("need at least three sides")
    if l <= 0:
        raise ValueError("need l > 0")
    if min(disk.side_length(i) for i in range(disk.r)) <= 0:
        raise DegeneratePolygon("zero-length polygon side")
    dom = disk.domain
    h = dom.mesh_size()

    heights = []
    for y in strip_height_ladder(h, grading):
        if y >= l - 1e-12:
            break
        heights.append(y)
    heights.append(l)

    points = [tuple(p) for p in dom.points]
    tris = [tuple(int(v) for v in t) for t in dom.triangles]
    strip_of = [-1] * len(points)
    height_of = [0.0] * len(points)
    strip_arcs = []

    p = dom.points
    for i in range(disk.r):
        chain = disk.side_chains[i]
        a = p[chain[0]]
        b = p[chain[-1]]
        side = b - a
        w = float(np.linalg.norm(side))
        n_out = -rot90(side / w)  # boundary is ccw, interior left, outward right
        params = [float(np.linalg.norm(p[v] - a)) for v in chain]

        prev_ids = list(chain)
        prev_params = params
        up_edges = []
        down_edges = []
        for y0, y1 in zip(heights[:-1], heights[1:]):
            dy = y1 - y0
            row_params = _decimate_params(prev_params, target=dy)
            row_ids = []
            for t in row_params:
                points.append(tuple(a + side * (t / w) + n_out * y1))
                strip_of.append(i)
                height_of.append(y1)
                row_ids.append(len(points) - 1)
            tris.extend(_stitch_rows(prev_ids, prev_params, row_ids, row_params))
            up_edges.append((prev_ids[0], row_ids[0]))
            down_edges.append((row_ids[-1], prev_ids[-1]))
            prev_ids, prev_params = row_ids, row_params

        cap = tuple((prev_ids[k], prev_ids[k + 1]) for k in range(len(prev_ids) - 1))
        strip_arcs.append((BoundaryArc(f"L{i}+", tuple(up_edges)),
                           BoundaryArc(f"cap{i}", cap),
                           BoundaryArc(f"L{(i + 1) % disk.r}-",
                                       tuple(reversed(down_edges)))))

    ordered = [arc for triple in strip_arcs for arc in triple]
    new_dom = MultiDomain(np.asarray(points, float), np.asarray(tris, np.int64),
                          ordered)
    new_dom.meta["h"] = h
    new_dom.meta["shape"] = ("omega_p", disk.r, l)
    return OmegaP(new_dom, disk, l, dom.n_vertices,
                  np.asarray(strip_of), np.asarray(height_of, float))


def _decimate_params(params, target):
    """Subsample a sorted parameter row, keeping endpoints, spacing ~ target."""
    out = [params[0]]
    for t in params[1:-1]:
        if t - out[-1] >= 0.75 * target:
            out.append(t)
    if len(out) > 1 and params[-1] - out[-1] < 0.35 * target:
        out.pop()
    out.append(params[-1])
    return out


# =============================================================================
# geodesic chords traced through the triangulation
# =============================================================================

@dataclass
class ChordTrace:
    """A straight segment developed through the mesh between two vertices."""

    start: int
    end: int
    pieces: list   # (triangle, t0, t1), t in [0, 1] along the segment
    length: float


def _star_wedge_triangle(dom: MultiDomain, vertex: int, direction, tol: float = 1e-9):
    """Star triangle whose wedge at `vertex` contains `direction`, else None."""
    p = dom.points
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    best = None
    for t in dom.vertex_tris[vertex]:
        verts = [int(v) for v in dom.triangles[t]]
        loc = verts.index(vertex)
        v1 = verts[(loc + 1) % 3]
        v2 = verts[(loc + 2) % 3]
        e1 = p[v1] - p[vertex]
        e2 = p[v2] - p[vertex]
        e1 = e1 / np.linalg.norm(e1)
        e2 = e2 / np.linalg.norm(e2)
        c1 = cross2(e1, d)
        c2 = cross2(d, e2)
        if c1 >= -tol and c2 >= -tol and (e1 @ d > -1 + 1e-12 or e2 @ d > -1 + 1e-12):
            if c1 > tol and c2 > tol:
                return t
            best = t
    return best


def trace_chord(dom: MultiDomain, v_from: int, v_to: int,
                forbidden_vertices=(), tol: float = 1e-9) -> ChordTrace | None:
    """Trace the geodesic chord between two vertices by walking triangles.

    A geodesic of a flat simply connected surface develops onto the
    straight segment between the developed endpoints, and its lift from
    the start vertex is unique, so the walk follows connectivity and
    handles overlapping sheets correctly.  Returns None when the segment
    leaves the domain, touches the boundary away from its endpoints, or
    passes through a vertex in `forbidden_vertices`.
    """
    p = dom.points
    a = p[v_from]
    b = p[v_to]
    d = b - a
    seg_len = float(np.linalg.norm(d))
    if seg_len < tol:
        return None
    forbidden = set(int(v) for v in forbidden_vertices) - {int(v_from), int(v_to)}

    pieces = []
    t_cur = 0.0
    at_vertex: int | None = int(v_from)
    cur_tri = -1
    max_steps = 4 * dom.n_triangles + 32

    for _ in range(max_steps):
        if at_vertex is not None:
            if at_vertex == v_to and t_cur > 1.0 - 1e-7:
                return ChordTrace(int(v_from), int(v_to), pieces, seg_len)
            if at_vertex != v_from:
                if at_vertex in forbidden:
                    return None
                if dom.is_boundary_vertex[at_vertex]:
                    return None
            cur_tri = _star_wedge_triangle(dom, at_vertex, d, tol)
            if cur_tri is None:
                return None
            at_vertex = None

        verts = [int(v) for v in dom.triangles[cur_tri]]
        tri_pts = p[verts]

        # does the endpoint lie in this triangle?
        m = np.column_stack([tri_pts[1] - tri_pts[0], tri_pts[2] - tri_pts[0]])
        lam = np.linalg.solve(m, b - tri_pts[0])
        l0 = 1.0 - lam.sum()
        if min(l0, lam[0], lam[1]) >= -tol:
            if v_to not in verts:
                return None  # endpoint position reached on a different sheet
            pieces.append((int(cur_tri), t_cur, 1.0))
            return ChordTrace(int(v_from), int(v_to), pieces, seg_len)

        # exit through one of the edges
        best_t, best_edge, best_s = None, None, None
        for (u, v) in ((verts[0], verts[1]), (verts[1], verts[2]), (verts[2], verts[0])):
            pu, pv = p[u], p[v]
            denom = cross2(d, pv - pu)
            if abs(denom) < 1e-30:
                continue
            t_e = cross2(pu - a, pv - pu) / denom
            s_e = cross2(pu - a, d) / denom
            if -tol <= s_e <= 1 + tol and t_e > t_cur + 1e-12:
                if best_t is None or t_e < best_t:
                    best_t, best_edge, best_s = t_e, (u, v), s_e
        if best_t is None:
            return None

        u, v = best_edge
        edge_len = float(np.linalg.norm(p[v] - p[u]))
        snap = tol * max(1.0, seg_len) / max(edge_len, 1e-30)
        if best_s <= snap or best_s >= 1 - snap:
            hit = u if best_s <= snap else v
            pieces.append((int(cur_tri), t_cur, float(best_t)))
            t_cur = float(best_t)
            at_vertex = int(hit)
            continue

        nxt = dom.tri_neighbor(cur_tri, u, v)
        if nxt < 0:
            return None  # exits through the boundary
        pieces.append((int(cur_tri), t_cur, float(best_t)))
        t_cur = float(best_t)
        cur_tri = nxt

    return None


def chords_cross(dom: MultiDomain, tr1: ChordTrace, tr2: ChordTrace) -> bool:
    """Whether two chords intersect inside the surface.

    Tested piecewise inside shared triangles, which is the correct notion
    on immersed domains (developed segments may cross in the plane while
    running on different sheets).
    """
    p = dom.points
    a1 = p[tr1.start]
    d1 = p[tr1.end] - a1
    a2 = p[tr2.start]
    d2 = p[tr2.end] - a2
    by_tri: dict[int, list] = {}
    for t, t0, t1 in tr1.pieces:
        by_tri.setdefault(t, []).append((t0, t1))
    for t, s0, s1 in tr2.pieces:
        if t not in by_tri:
            continue
        q1 = a2 + s0 * d2
        q2 = a2 + s1 * d2
        for (t0, t1) in by_tri[t]:
            if segments_intersect(a1 + t0 * d1, a1 + t1 * d1, q1, q2):
                return True
    return False
