"""Conjugate one-form, conformal reparametrization, and conjugate surface.

For a solution u of the minimal surface equation with gradient (p, q)
and W = sqrt(1 + p^2 + q^2), the third coordinate of the conjugate
surface has differential

    dPsi = (p / W) dy - (q / W) dx,

a closed form (closedness IS the equation), whose primitive Psi is
1-Lipschitz.  The map Phi with

    dxi  = (1 + (1 + p^2)/W) dx + (p q / W) dy
    deta = (p q / W) dx + (1 + (1 + q^2)/W) dy

increases distances and gives conformal parameters (xi, eta) for the
graph, with Jacobian determinant J = W + 2 + 1/W = (W + 1)^2 / W.
Rotating the differentials of the coordinate functions x, y, u by 90
degrees in these conformal coordinates and integrating yields the
conjugate minimal surface (x1*, x2*, x3*), with x3* = Psi; conjugation
preserves the induced metric.

Discretely, all forms are constant per triangle; an edge value is the
average of the two adjacent triangle evaluations (midpoint quadrature),
primitives are integrated over a spanning tree, and closedness holds up
to O(h) per loop: each triangle's own evaluation closes exactly around
the triangle, so the residual is driven by the across-edge jumps alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, dijkstra
from scipy.sparse.linalg import splu

from .errors import ClosednessViolation, NonPlanarBoundary, PeriodViolation
from .flatgeom import MultiDomain
from .msesolve import DiscreteSolution

# Expected interior-loop residual of an averaged per-edge 1-form is
# C * h * len(loop); the violation gate fires at 10x that bound.
CLOSEDNESS_COEFF = 1.0


# =============================================================================
# discrete 1-forms
# =============================================================================

def _edge_index(dom: MultiDomain):
    """Deterministic edge list (u < v) with lookup dict."""
    edges = sorted(dom.edge_tris.keys())
    lookup = {e: i for i, e in enumerate(edges)}
    return np.asarray(edges, dtype=np.int64), lookup


def _edge_values_from_covectors(dom: MultiDomain, covec: np.ndarray,
                                edges: np.ndarray, lookup: dict) -> np.ndarray:
    """Average the per-triangle constant covector field over each edge.

    The value on directed edge (u, v) is covec . (P_v - P_u), averaged
    over the adjacent triangles.
    """
    p = dom.points
    vals = np.zeros(len(edges))
    counts = np.zeros(len(edges))
    tris = dom.triangles
    for loc in range(3):
        a = tris[:, loc]
        b = tris[:, (loc + 1) % 3]
        d = p[b] - p[a]
        contrib = (covec * d).sum(axis=1)
        for t in range(len(tris)):
            u, v = int(a[t]), int(b[t])
            key = (u, v) if u < v else (v, u)
            idx = lookup[key]
            vals[idx] += contrib[t] if u < v else -contrib[t]
            counts[idx] += 1
    return vals / counts


def _integrate_over_tree(dom: MultiDomain, edges, lookup, edge_vals,
                         root: int) -> np.ndarray:
    """Primitive of a per-edge 1-form along a breadth-first spanning tree.

    Exact for exactly closed forms; kept as the seed for the least-squares
    integration below.
    """
    n = dom.n_vertices
    rows = edges[:, 0]
    cols = edges[:, 1]
    adj = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    adj = adj + adj.T
    order, pred = breadth_first_order(adj.tocsr(), root, directed=False,
                                      return_predecessors=True)
    prim = np.zeros(n)
    for v in order:
        u = pred[v]
        if u < 0:
            continue
        key = (u, v) if u < v else (v, u)
        sgn = 1.0 if u < v else -1.0
        prim[v] = prim[u] + sgn * edge_vals[lookup[key]]
    return prim


def _integrate_least_squares(dom: MultiDomain, edges, edge_vals,
                             root: int) -> np.ndarray:
    """Potential whose edge differences best match a per-edge 1-form.

    Minimizes sum_e (prim_v - prim_u - omega_uv)^2 over vertex potentials
    (a graph Poisson solve).  A spanning-tree walk would push the small
    non-closedness of the discrete form onto whichever loops the tree
    happens to enclose, corrupting differences far from the root; the
    least-squares potential keeps local differences accurate wherever the
    form is locally consistent.
    """
    n = dom.n_vertices
    rows = edges[:, 0]
    cols = edges[:, 1]
    ones = np.ones(len(edges))
    lap = coo_matrix((np.concatenate([ones, ones, -ones, -ones]),
                      (np.concatenate([rows, cols, rows, cols]),
                       np.concatenate([rows, cols, cols, rows]))),
                     shape=(n, n)).tocsr()
    div = np.zeros(n)
    np.add.at(div, rows, -edge_vals)
    np.add.at(div, cols, edge_vals)
    # pin the root by a diagonal bump (right-hand side already consistent)
    lap = lap.tolil()
    lap[root, root] += 1.0
    prim = splu(lap.tocsc()).solve(div)
    return prim - prim[root]


def _triangle_loop_residuals(dom: MultiDomain, lookup, edge_vals) -> np.ndarray:
    """Circulation of the averaged form around every triangle."""
    res = np.zeros(dom.n_triangles)
    tris = dom.triangles
    for t in range(len(tris)):
        s = 0.0
        for loc in range(3):
            u = int(tris[t, loc])
            v = int(tris[t, (loc + 1) % 3])
            key = (u, v) if u < v else (v, u)
            s += edge_vals[lookup[key]] if u < v else -edge_vals[lookup[key]]
        res[t] = s
    return res


def _interior_triangle_mask(dom: MultiDomain) -> np.ndarray:
    """Triangles with no vertex on the boundary (loops fully interior)."""
    return ~dom.is_boundary_vertex[dom.triangles].any(axis=1)


@dataclass
class ConjugateField:
    """Conjugate function Psi with its per-edge differential."""

    domain: MultiDomain
    psi: np.ndarray
    edges: np.ndarray          # (E, 2), u < v
    edge_values: np.ndarray    # integral of dPsi along u -> v
    loop_residuals: np.ndarray  # per-triangle circulation
    normalization_vertex: int

    def edge_value(self, u: int, v: int) -> float:
        key = (u, v) if u < v else (v, u)
        idx = self._lookup[key]
        return float(self.edge_values[idx] if u < v else -self.edge_values[idx])

    def lipschitz_excess(self) -> float:
        """max over mesh edges of |Psi(P)-Psi(Q)| - d(P,Q) (<= 0 means 1-Lipschitz)."""
        p = self.domain.points
        du = np.abs(self.psi[self.edges[:, 1]] - self.psi[self.edges[:, 0]])
        dl = np.linalg.norm(p[self.edges[:, 1]] - p[self.edges[:, 0]], axis=1)
        return float((du - dl).max())


def conjugate_form(sol: DiscreteSolution, normalization_vertex: int | None = None,
                   check: bool = True) -> ConjugateField:
    """Integrate the conjugate differential of a solved graph.

    Psi is integrated over a spanning tree from the normalization vertex
    (the first domain vertex by default).  Every interior triangle loop
    must close within 10 * C * h * len(loop); larger residuals signal a
    bad solve and raise ClosednessViolation.
    """
    dom = sol.domain
    if normalization_vertex is None:
        normalization_vertex = dom.domain_vertices[0] if dom.domain_vertices else 0
    covec = np.column_stack([-sol.grad[:, 1] / sol.w, sol.grad[:, 0] / sol.w])
    edges, lookup = _edge_index(dom)
    vals = _edge_values_from_covectors(dom, covec, edges, lookup)
    psi = _integrate_least_squares(dom, edges, vals, normalization_vertex)
    psi -= psi[normalization_vertex]
    res = _triangle_loop_residuals(dom, lookup, vals)

    if check:
        _gate_closedness(dom, res, "dPsi")

    field = ConjugateField(dom, psi, edges, vals, res, int(normalization_vertex))
    field._lookup = lookup
    return field


def _gate_closedness(dom, residuals, name, field_scale=None):
    """Raise when interior loop residuals exceed 10x the expected bound.

    The expected residual is C h len(loop) times the local magnitude of
    the form's coefficients: 1 for dPsi (unit-bounded), O(W) for the
    conformal and conjugate-coordinate forms.
    """
    h = dom.mesh_size()
    p = dom.points[dom.triangles]
    perim = (np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
             + np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
             + np.linalg.norm(p[:, 0] - p[:, 2], axis=1))
    interior = _interior_triangle_mask(dom)
    if not interior.any():
        return
    bound = 10.0 * CLOSEDNESS_COEFF * h * perim
    if field_scale is not None:
        bound = bound * np.maximum(1.0, _neighborhood_max(dom, field_scale))
    bad = interior & (np.abs(residuals) > bound)
    if bad.any():
        t = int(np.nonzero(bad)[0][0])
        raise ClosednessViolation(
            f"{name} loop residual {residuals[t]:.3e} on triangle {t} exceeds "
            f"10x the discretization bound {bound[t]:.3e}")


def _neighborhood_max(dom: MultiDomain, tri_values: np.ndarray) -> np.ndarray:
    """Per-triangle max of a triangle field over the vertex-star neighborhood."""
    per_vertex = np.zeros(dom.n_vertices)
    for loc in range(3):
        np.maximum.at(per_vertex, dom.triangles[:, loc], tri_values)
    return per_vertex[dom.triangles].max(axis=1)


def flux_along(field: ConjugateField, path) -> float:
    """Integral of dPsi along a chain of mesh vertices (orientation as given)."""
    total = 0.0
    for u, v in zip(path[:-1], path[1:]):
        total += field.edge_value(int(u), int(v))
    return float(total)


# =============================================================================
# conformal map
# =============================================================================

@dataclass
class ConformalMesh:
    """Distance-increasing reparametrization with conformal image coordinates."""

    domain: MultiDomain
    xi_eta: np.ndarray          # (n, 2)
    jacobian: np.ndarray        # per-triangle det of the affine map
    loop_residuals: np.ndarray  # (m, 2): circulation of (dxi, deta)

    def predicted_jacobian(self, w):
        return w + 2.0 + 1.0 / w


def conformal_map(sol: DiscreteSolution, normalization_vertex: int | None = None,
                  check: bool = True) -> ConformalMesh:
    """Integrate the conformal coordinates (xi, eta) of the graph."""
    dom = sol.domain
    if normalization_vertex is None:
        normalization_vertex = dom.domain_vertices[0] if dom.domain_vertices else 0
    p, q = sol.grad[:, 0], sol.grad[:, 1]
    w = sol.w
    cov_xi = np.column_stack([1.0 + (1.0 + p ** 2) / w, p * q / w])
    cov_eta = np.column_stack([p * q / w, 1.0 + (1.0 + q ** 2) / w])

    edges, lookup = _edge_index(dom)
    vals_xi = _edge_values_from_covectors(dom, cov_xi, edges, lookup)
    vals_eta = _edge_values_from_covectors(dom, cov_eta, edges, lookup)
    xi = _integrate_least_squares(dom, edges, vals_xi, normalization_vertex)
    eta = _integrate_least_squares(dom, edges, vals_eta, normalization_vertex)
    xi -= xi[normalization_vertex]
    eta -= eta[normalization_vertex]
    res = np.column_stack([
        _triangle_loop_residuals(dom, lookup, vals_xi),
        _triangle_loop_residuals(dom, lookup, vals_eta),
    ])
    if check:
        _gate_closedness(dom, res[:, 0], "dxi", field_scale=w)
        _gate_closedness(dom, res[:, 1], "deta", field_scale=w)

    xi_eta = np.column_stack([xi, eta])
    jac = _per_triangle_jacobian(dom, xi_eta)
    return ConformalMesh(dom, xi_eta, jac, res)


def _per_triangle_jacobian(dom: MultiDomain, image: np.ndarray) -> np.ndarray:
    """det of the affine map (x, y) -> image per triangle."""
    tris = dom.triangles
    p = dom.points
    out = np.empty(len(tris))
    for t in range(len(tris)):
        i, j, k = tris[t]
        a = np.column_stack([p[j] - p[i], p[k] - p[i]])
        b = np.column_stack([image[j] - image[i], image[k] - image[i]])
        m = b @ np.linalg.inv(a)
        out[t] = np.linalg.det(m)
    return out


# =============================================================================
# conjugate surface
# =============================================================================

@dataclass
class ConjugateSurface:
    """Conjugate minimal surface of a solved graph, as a 3D vertex field.

    Vertices correspond one-to-one with the source domain mesh; the third
    coordinate equals the conjugate function Psi.
    """

    domain: MultiDomain
    positions: np.ndarray        # (n, 3)
    psi: np.ndarray
    source_u: np.ndarray
    period_residuals: np.ndarray  # (m, 2) circulation of (dx1*, dx2*)
    boundary_tags: dict           # arc label -> vertex chain

    def edge_distortion(self, interior_only: bool = False) -> float:
        """max relative deviation of conjugate edge lengths from the GRAPH's.

        Conjugation preserves the induced metric of the graph (not the
        flat domain metric), so edges are compared in R^3 on both sides.
        """
        dom = self.domain
        p2 = dom.points
        u = self.source_u
        p3 = self.positions
        worst = 0.0
        for (a, b) in dom.edge_tris:
            if interior_only and (dom.is_boundary_vertex[a]
                                  or dom.is_boundary_vertex[b]):
                continue
            lg = np.sqrt(((p2[a] - p2[b]) ** 2).sum() + (u[a] - u[b]) ** 2)
            lc = np.linalg.norm(p3[a] - p3[b])
            worst = max(worst, abs(lc - lg) / lg)
        return float(worst)


def conjugate_surface(sol: DiscreteSolution, field: ConjugateField | None = None,
                      cmesh: ConformalMesh | None = None,
                      normalization_vertex: int | None = None,
                      check: bool = True) -> ConjugateSurface:
    """Integrate the conjugate surface of a solved graph.

    The first two coordinates are primitives of the harmonic conjugates
    of the developed coordinates x and y, formed by rotating their
    differentials by 90 degrees in the conformal parameters; written back
    in developed coordinates the three conjugate differentials have the
    closed forms

        dx1* = (pq/W) dx + ((W+1+q^2)^2 + p^2 q^2) / (W^2 J) dy
        dx2* = -((W+1+p^2)^2 + p^2 q^2) / (W^2 J) dx - (pq/W) dy
        dx3* = dPsi,

    with J = W + 2 + 1/W.  Periods around interior loops are reported
    and gated like dPsi closedness.
    """
    dom = sol.domain
    if normalization_vertex is None:
        normalization_vertex = dom.domain_vertices[0] if dom.domain_vertices else 0
    if field is None:
        field = conjugate_form(sol, normalization_vertex, check=check)
    p, q = sol.grad[:, 0], sol.grad[:, 1]
    w = sol.w
    jac = w + 2.0 + 1.0 / w
    w2j = w ** 2 * jac
    cov1 = np.column_stack([p * q / w, ((w + 1 + q ** 2) ** 2 + p ** 2 * q ** 2) / w2j])
    cov2 = np.column_stack([-((w + 1 + p ** 2) ** 2 + p ** 2 * q ** 2) / w2j,
                            -p * q / w])

    edges, lookup = _edge_index(dom)
    vals1 = _edge_values_from_covectors(dom, cov1, edges, lookup)
    vals2 = _edge_values_from_covectors(dom, cov2, edges, lookup)
    x1 = _integrate_least_squares(dom, edges, vals1, normalization_vertex)
    x2 = _integrate_least_squares(dom, edges, vals2, normalization_vertex)
    x1 -= x1[normalization_vertex]
    x2 -= x2[normalization_vertex]
    res = np.column_stack([
        _triangle_loop_residuals(dom, lookup, vals1),
        _triangle_loop_residuals(dom, lookup, vals2),
    ])
    if check:
        try:
            _gate_closedness(dom, res[:, 0], "dx1*", field_scale=w)
            _gate_closedness(dom, res[:, 1], "dx2*", field_scale=w)
        except ClosednessViolation as exc:
            raise PeriodViolation(str(exc)) from exc

    positions = np.column_stack([x1, x2, field.psi])
    tags = {arc.label: arc.vertices for arc in dom.boundary_arcs}
    return ConjugateSurface(dom, positions, field.psi.copy(), sol.u.copy(),
                            res, tags)


# =============================================================================
# reflection through {x3 = 0}
# =============================================================================

@dataclass
class ReflectedSurface:
    """Union of a conjugate surface and its mirror image through {x3 = 0}.

    Boundary vertices within the seam tolerance of the plane are snapped
    to it and identified with their mirror images; the remaining boundary
    survives as the truncation loops of the ends.
    """

    vertices: np.ndarray   # (N, 3)
    faces: np.ndarray      # (M, 3)
    seam_vertices: np.ndarray
    mirror_of: np.ndarray  # index map source vertex -> mirrored copy
    degenerate: bool

    def euler_characteristic(self) -> int:
        edges = set()
        for f in self.faces:
            i, j, k = (int(v) for v in f)
            for a, b in ((i, j), (j, k), (k, i)):
                edges.add((a, b) if a < b else (b, a))
        return len(self.vertices) - len(edges) + len(self.faces)

    def boundary_loops(self) -> list[list[int]]:
        count: dict = {}
        direct: dict = {}
        for f in self.faces:
            i, j, k = (int(v) for v in f)
            for a, b in ((i, j), (j, k), (k, i)):
                key = (a, b) if a < b else (b, a)
                count[key] = count.get(key, 0) + 1
                direct[key] = (a, b)
        nxt = {}
        for key, c in count.items():
            if c == 1:
                a, b = direct[key]
                nxt[a] = b
        loops = []
        seen = set()
        for start in list(nxt):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            cur = nxt[start]
            while cur != start and cur not in seen:
                loop.append(cur)
                seen.add(cur)
                cur = nxt.get(cur, start)
            loops.append(loop)
        return loops


def reflect_union(surface: ConjugateSurface, seam_tol: float | None = None
                  ) -> ReflectedSurface:
    """Glue the conjugate surface to its reflection through {x3 = 0}.

    Boundary vertices with |x3| <= seam_tol form the seam and are welded
    to their mirror images (the surface's planar symmetry curves); there
    must be at least one seam vertex, else NonPlanarBoundary.  The default
    tolerance is 5 h times the domain diameter, matching how the solve
    error scales into Psi.
    """
    dom = surface.domain
    if seam_tol is None:
        seam_tol = 5.0 * dom.mesh_size() * dom.diameter()
    pos = surface.positions
    n = len(pos)
    boundary = dom.is_boundary_vertex
    seam = boundary & (np.abs(pos[:, 2]) <= seam_tol)
    if not seam.any():
        raise NonPlanarBoundary(
            f"no boundary vertex lies within {seam_tol:.3g} of the symmetry plane "
            f"(min |x3*| on boundary = {np.abs(pos[boundary, 2]).min():.3g})")

    verts = pos.copy()
    verts[seam, 2] = 0.0
    degenerate = bool(np.all(np.abs(pos[:, 2]) <= seam_tol))

    mirror_of = np.full(n, -1, dtype=int)
    extra = []
    for v in range(n):
        if seam[v]:
            mirror_of[v] = v
        else:
            mirror_of[v] = n + len(extra)
            extra.append([verts[v, 0], verts[v, 1], -verts[v, 2]])
    all_verts = np.vstack([verts, np.asarray(extra).reshape(-1, 3)])

    faces = [tuple(int(v) for v in f) for f in dom.triangles]
    for f in dom.triangles:
        i, j, k = (int(v) for v in f)
        faces.append((mirror_of[i], mirror_of[k], mirror_of[j]))  # flip orientation
    return ReflectedSurface(all_verts, np.asarray(faces, dtype=np.int64),
                            np.nonzero(seam)[0], mirror_of, degenerate)


# =============================================================================
# mesh-path utilities
# =============================================================================

def shortest_vertex_path(dom: MultiDomain, v_from: int, v_to: int) -> list[int]:
    """Shortest edge path between two vertices (for flux integrals).

    Any mesh path gives the same dPsi integral up to the closedness
    residual, so the geodesic-ish shortest path is just a stable choice.
    """
    edges = sorted(dom.edge_tris.keys())
    n = dom.n_vertices
    p = dom.points
    wts = [float(np.linalg.norm(p[a] - p[b])) for a, b in edges]
    rows = [e[0] for e in edges]
    cols = [e[1] for e in edges]
    graph = coo_matrix((wts, (rows, cols)), shape=(n, n))
    graph = graph + graph.T
    _, pred = dijkstra(graph.tocsr(), directed=False, indices=v_from,
                       return_predecessors=True)
    if pred[v_to] < 0 and v_to != v_from:
        raise ValueError("vertices not connected")
    path = [int(v_to)]
    while path[-1] != v_from:
        path.append(int(pred[path[-1]]))
    return path[::-1]
