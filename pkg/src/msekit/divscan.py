"""Divergence structure of solution sequences.

When a sequence of minimal graphs does not converge, the set where the
gradients blow up organizes itself along geodesics: straight segments in
developed coordinates, along which the unit normals converge to a common
horizontal vector and the conjugate-form flux saturates to arc length.
This module classifies vertices into bounded/divergent by the growth of
W = sqrt(1 + |grad u|^2), fits lines to the divergent components, and
measures limit normals and flux saturation along them.

Ramp-approximated infinite edges always carry an unresolved boundary
layer whose W grows with the ramp level, independently of whether the
limit problem is solvable, so triangles touching those edges are
excluded from the classification; divergence elsewhere is the signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conjfield import conjugate_form, flux_along, shortest_vertex_path
from .errors import NoDivergence, TooShortSequence
from .flatgeom import MultiDomain
from .jscheck import MINUS_INF, PLUS_INF, BoundaryData
from .msesolve import DiscreteSolution

# A vertex counts as divergent when its W exceeds this multiple of the
# reference median at the top two levels and grows across the top three.
DIVERGENCE_FACTOR = 10.0

# Minimal per-level growth ratio that counts as "growing": steep but
# converged boundary rows of solvable problems creep by far less, while
# genuinely divergent walls scale with the ramp level itself.
GROWTH_MIN = 1.02

# Components smaller than this are sub-mesh noise, not lines.
MIN_COMPONENT_SIZE = 5

# Corners where infinite-data edges meet always carry mesh-scale
# gradient blow-up (the graph has a vertical line over such a corner,
# converging or not), so disks of this many mesh sizes around them are
# excluded; only divergence at definite distance from those corners
# signals an unsolvable configuration.
CORNER_EXCLUSION_FACTOR = 4.0

# Central fraction of a fitted line used for normal statistics; the
# component tips sit where a line meets the boundary or other features.
CENTRAL_FRACTION = 0.8


@dataclass
class NormalField:
    """Downward unit normals of a solved graph, one per triangle."""

    domain: MultiDomain
    normals: np.ndarray  # (m, 3)


def normal_field(sol: DiscreteSolution) -> NormalField:
    """N = (p/W, q/W, -1/W) per triangle."""
    n = np.column_stack([sol.grad[:, 0] / sol.w,
                         sol.grad[:, 1] / sol.w,
                         -1.0 / sol.w])
    return NormalField(sol.domain, n)


# =============================================================================
# bounded region classification
# =============================================================================

BOUNDED = "bounded"
DIVERGENT = "divergent"
EXCLUDED = "excluded"


@dataclass
class BoundedRegionReport:
    status: np.ndarray        # per-vertex string
    w_by_level: np.ndarray    # (K, n) vertex W per level
    medians: np.ndarray       # (K,)
    threshold: float
    excluded_triangles: np.ndarray

    @property
    def divergent_vertices(self) -> np.ndarray:
        return np.nonzero(self.status == DIVERGENT)[0]

    @property
    def bounded_vertices(self) -> np.ndarray:
        return np.nonzero(self.status == BOUNDED)[0]

    def sup_w_tail(self) -> np.ndarray:
        """Per-vertex sup of W over the top two levels."""
        return self.w_by_level[-2:].max(axis=0)


def _excluded_triangle_mask(dom: MultiDomain, data: BoundaryData | None) -> np.ndarray:
    """Triangles touching a ramped (+-inf) arc or a corner of one."""
    mask = np.zeros(dom.n_triangles, dtype=bool)
    if data is None:
        return mask
    ramped = np.zeros(dom.n_vertices, dtype=bool)
    corner_pts = []
    for arc in dom.boundary_arcs:
        if data.condition(arc.label).kind in (PLUS_INF, MINUS_INF):
            for v in arc.vertices:
                ramped[v] = True
            corner_pts.extend([arc.start, arc.end])
    if corner_pts:
        rad = CORNER_EXCLUSION_FACTOR * dom.mesh_size()
        for c in set(corner_pts):
            near = np.linalg.norm(dom.points - dom.points[c], axis=1) <= rad
            ramped |= near
    return ramped[dom.triangles].any(axis=1)


def bounded_region(seq: list[DiscreteSolution], data: BoundaryData | None = None
                   ) -> BoundedRegionReport:
    """Classify vertices by the growth of W across the sequence.

    All solutions must live on one mesh and the sequence needs length at
    least three.  A vertex is divergent when its W (max over included
    incident triangles) exceeds DIVERGENCE_FACTOR times the reference
    median at the top two levels and grows strictly across the top three;
    the reference median is the smallest per-level median, so sequences
    whose W inflates globally (synthetic tilting planes) are still caught
    while a uniformly converged sequence reports everything bounded.
    """
    if len(seq) < 3:
        raise TooShortSequence("need at least three solutions")
    dom = seq[0].domain
    for s in seq[1:]:
        if s.domain is not dom and s.domain.n_vertices != dom.n_vertices:
            raise ValueError("solutions must share one mesh")

    excluded_tris = _excluded_triangle_mask(dom, data)
    keep = ~excluded_tris
    k = len(seq)
    n = dom.n_vertices
    w_by_level = np.zeros((k, n))
    has_tri = np.zeros(n, dtype=bool)
    for lv, sol in enumerate(seq):
        wv = np.zeros(n)
        tris = dom.triangles[keep]
        np.maximum.at(wv, tris.ravel(), np.repeat(sol.w[keep], 3))
        w_by_level[lv] = wv
    has_tri[dom.triangles[keep].ravel()] = True

    medians = np.array([np.median(w[has_tri]) for w in w_by_level]) \
        if has_tri.any() else np.ones(k)
    threshold = DIVERGENCE_FACTOR * float(medians.min())

    status = np.full(n, BOUNDED, dtype=object)
    status[~has_tri] = EXCLUDED
    big = (w_by_level[-1] > threshold) & (w_by_level[-2] > threshold)
    growing = (w_by_level[-1] > GROWTH_MIN * w_by_level[-2]) \
        & (w_by_level[-2] > GROWTH_MIN * w_by_level[-3])
    status[has_tri & big & growing] = DIVERGENT
    return BoundedRegionReport(status, w_by_level, medians, threshold, excluded_tris)


# =============================================================================
# line detection
# =============================================================================

@dataclass
class DivergenceLine:
    """One fitted line of divergence."""

    vertices: np.ndarray
    base_point: np.ndarray
    direction: np.ndarray
    extent: tuple               # (t_min, t_max) along the direction
    straightness_residual: float
    limit_normal: np.ndarray
    normal_horizontal: bool
    normal_spread_deg: float
    flux_saturation: list       # per sub-segment, top level
    saturation_by_level: list   # (K, segments) nested list

    def describe(self) -> dict:
        return {
            "n_vertices": int(len(self.vertices)),
            "base_point": [float(c) for c in self.base_point],
            "direction": [float(c) for c in self.direction],
            "length": float(self.extent[1] - self.extent[0]),
            "straightness_residual": float(self.straightness_residual),
            "limit_normal": [float(c) for c in self.limit_normal],
            "normal_horizontal": bool(self.normal_horizontal),
            "normal_spread_deg": float(self.normal_spread_deg),
            "flux_saturation": [float(s) for s in self.flux_saturation],
        }


@dataclass
class DivergenceReport:
    region: BoundedRegionReport
    lines: list
    crossings_ok: bool

    def describe(self) -> dict:
        return {
            "n_divergent": int(len(self.region.divergent_vertices)),
            "threshold": float(self.region.threshold),
            "lines": [ln.describe() for ln in self.lines],
            "crossings_ok": bool(self.crossings_ok),
        }


def detect_divergence_lines(seq: list[DiscreteSolution],
                            data: BoundaryData | None = None,
                            region: BoundedRegionReport | None = None
                            ) -> DivergenceReport:
    """Fit lines to the divergent set and measure their invariants.

    Each connected component of the divergent vertex set (minimum size 5)
    is fitted with a total-least-squares line in developed coordinates.
    Along each line the limit normal is averaged from the top-level
    solution, and the conjugate-form flux is integrated over three
    interior sub-segments; saturation of the ratio flux/length toward 1
    is the signature of a genuine line of divergence.

    Raises NoDivergence when no component reaches the minimum size.
    """
    if region is None:
        region = bounded_region(seq, data)
    dom = seq[0].domain
    div = set(int(v) for v in region.divergent_vertices)
    if not div:
        raise NoDivergence("every analyzed vertex has bounded gradient")

    components = _components(dom, div)
    components = [c for c in components if len(c) >= MIN_COMPONENT_SIZE]
    if not components:
        raise NoDivergence("divergent set is sub-mesh noise (all components < "
                           f"{MIN_COMPONENT_SIZE} vertices)")

    fields = [conjugate_form(s, check=False) for s in seq]
    normals = normal_field(seq[-1])
    # normal statistics come from the steep triangles only; a thin wall
    # component touches flat triangles on its convergent side, whose
    # near-vertical normals say nothing about the line
    keep_tris = ~region.excluded_triangles
    steep = keep_tris & (seq[-1].w >= region.threshold)

    lines = []
    for comp in components:
        lines.append(_fit_line(dom, np.asarray(sorted(comp)), normals,
                               steep if steep.any() else keep_tris, fields))
    lines.sort(key=lambda ln: (ln.base_point[0], ln.base_point[1]))
    crossings_ok = _check_crossings(lines)
    return DivergenceReport(region, lines, crossings_ok)


def _components(dom: MultiDomain, div: set) -> list[set]:
    adj = {v: [] for v in div}
    for (a, b) in dom.edge_tris:
        if a in div and b in div:
            adj[a].append(b)
            adj[b].append(a)
    seen = set()
    comps = []
    for start in sorted(div):
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        seen.add(start)
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    comp.add(w)
                    stack.append(w)
        comps.append(comp)
    return comps


def _fit_line(dom, comp, normals, keep_tris, fields) -> DivergenceLine:
    pts = dom.points[comp]
    base = pts.mean(axis=0)
    centered = pts - base

    # limit normal averaged over the component's included triangles
    tri_ids = sorted({ti for v in comp for ti in dom.vertex_tris[v] if keep_tris[ti]})
    avg = normals.normals[tri_ids].mean(axis=0)
    avg = avg / np.linalg.norm(avg)
    horizontal = abs(avg[2]) <= 0.1

    # a line of divergence runs perpendicular to its limit normal; fall
    # back to the principal axis of the point cloud when the horizontal
    # normal part is too weak to orient the line
    n_h = avg[:2]
    if np.linalg.norm(n_h) > 0.5:
        direction = np.array([-n_h[1], n_h[0]]) / np.linalg.norm(n_h)
    else:
        cov = centered.T @ centered
        _, evecs = np.linalg.eigh(cov)
        direction = evecs[:, -1]
    if direction[0] < 0 or (direction[0] == 0 and direction[1] < 0):
        direction = -direction
    t = centered @ direction
    offsets = centered @ np.array([-direction[1], direction[0]])
    t_min, t_max = float(t.min()), float(t.max())

    # angular spread over the central part of the line
    lo = t_min + (1 - CENTRAL_FRACTION) / 2 * (t_max - t_min)
    hi = t_max - (1 - CENTRAL_FRACTION) / 2 * (t_max - t_min)
    central_tris = []
    for v, tv in zip(comp, t):
        if lo <= tv <= hi:
            central_tris.extend(ti for ti in dom.vertex_tris[v] if keep_tris[ti])
    central_tris = sorted(set(central_tris))
    spread = 0.0
    for ti in central_tris:
        nv = normals.normals[ti]
        c = float(np.clip(nv @ avg, -1.0, 1.0))
        spread = max(spread, np.degrees(np.arccos(c)))

    saturation_by_level = []
    for fld in fields:
        saturation_by_level.append(
            _segment_saturations(dom, comp, t, base, direction, (lo, hi), fld))
    return DivergenceLine(
        vertices=comp, base_point=base, direction=direction,
        extent=(t_min, t_max),
        straightness_residual=float(np.abs(offsets).max()),
        limit_normal=avg, normal_horizontal=horizontal,
        normal_spread_deg=float(spread),
        flux_saturation=saturation_by_level[-1],
        saturation_by_level=saturation_by_level,
    )


def _segment_saturations(dom, comp, t, base, direction, window, fld):
    """|flux| / length of dPsi over three interior sub-segments of the line."""
    lo, hi = window
    cuts = np.linspace(lo, hi, 4)
    out = []
    for s0, s1 in zip(cuts[:-1], cuts[1:]):
        v0 = comp[int(np.argmin(np.abs(t - s0)))]
        v1 = comp[int(np.argmin(np.abs(t - s1)))]
        if v0 == v1:
            out.append(0.0)
            continue
        path = shortest_vertex_path(dom, int(v0), int(v1))
        flux = abs(flux_along(fld, path))
        length = float(np.linalg.norm(dom.points[v1] - dom.points[v0]))
        out.append(flux / max(length, 1e-30))
    return out


def _check_crossings(lines, angle_tol_deg: float = 15.0) -> bool:
    """No two lines may cross at an interior point with distinct normals."""
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            a, b = lines[i], lines[j]
            m = np.column_stack([a.direction, -b.direction])
            det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            if abs(det) < 1e-12:
                continue  # parallel
            ts = np.linalg.solve(m, b.base_point - a.base_point)
            inside_a = a.extent[0] < ts[0] < a.extent[1]
            inside_b = b.extent[0] < ts[1] < b.extent[1]
            if inside_a and inside_b:
                c = float(np.clip(a.limit_normal @ b.limit_normal, -1, 1))
                if np.degrees(np.arccos(abs(c))) > angle_tol_deg:
                    return False
    return True


# =============================================================================
# curvature-estimate disk check
# =============================================================================

def two_m_disk_check(seq: list[DiscreteSolution], vertex: int,
                     data: BoundaryData | None = None) -> dict:
    """Radius on which W stays below twice its value at a marked vertex.

    Interior gradient estimates give a radius, depending only on sup_n
    W_n(P) and the distance to the boundary, on which W_n is uniformly
    below 2 sup_n W_n(P); this measures the empirically largest such
    radius per level and checks it stays mesh-resolvable.
    """
    dom = seq[0].domain
    region = bounded_region(seq, data) if len(seq) >= 3 else None
    p = dom.points
    dist = np.linalg.norm(p - p[vertex], axis=1)
    bnd = np.nonzero(dom.is_boundary_vertex)[0]
    d_boundary = float(np.min(np.linalg.norm(p[bnd] - p[vertex], axis=1))) \
        if len(bnd) else float("inf")

    keep = ~_excluded_triangle_mask(dom, data)
    n = dom.n_vertices
    radii = []
    sup_m = 0.0
    w_vertex = []
    for sol in seq:
        wv = np.zeros(n)
        tris = dom.triangles[keep]
        np.maximum.at(wv, tris.ravel(), np.repeat(sol.w[keep], 3))
        w_here = float(wv[vertex])
        w_vertex.append(w_here)
        sup_m = max(sup_m, w_here)
    for sol in seq:
        wv = np.zeros(n)
        tris = dom.triangles[keep]
        np.maximum.at(wv, tris.ravel(), np.repeat(sol.w[keep], 3))
        viol = (wv > 2.0 * sup_m) & (wv > 0)
        if viol.any():
            rho = float(dist[viol].min())
        else:
            rho = d_boundary
        radii.append(min(rho, d_boundary))

    h = dom.mesh_size()
    return {
        "vertex": int(vertex),
        "w_at_vertex": w_vertex,
        "sup_w": sup_m,
        "radii": radii,
        "min_radius": float(min(radii)),
        "boundary_distance": d_boundary,
        "mesh_resolvable": bool(min(radii) >= 2.0 * h),
    }
