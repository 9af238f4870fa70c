"""Jenkins-Serrin solvability of the Dirichlet problem with infinite data.

On a compact multi-domain whose boundary splits into straight edges
carrying +infinity (A family), straight edges carrying -infinity (B
family) and arcs with finite continuous data (C family), a solution of
the minimal surface equation attaining that data exists iff, for every
polygonal subdomain P with corners drawn from the domain vertices,

    2 alpha < gamma   and   2 beta < gamma,

where alpha and beta are the total lengths of A and B edges on the
boundary of P and gamma is the perimeter of P.  When the C family is
empty the inequality at P = Omega itself degenerates: existence (up to
an additive constant) requires alpha = beta there instead.

Subdomain boundaries are built from chords: straight boundary arcs, or
geodesic segments between domain vertices traced through the
triangulation, so immersed domains are covered by the same machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TooManyVertices
from .flatgeom import (
    ChordTrace,
    MultiDomain,
    chords_cross,
    point_in_polygon,
    polygon_area,
    trace_chord,
)

PLUS_INF = "+inf"
MINUS_INF = "-inf"
FINITE = "finite"

# An exhaustive cycle search is exponential; certificates must be exact,
# so there is a hard cap instead of a heuristic fallback.
MAX_DOMAIN_VERTICES = 16

# Strict inequalities evaluated with a relative slack: geometric lengths
# carry floating error and the equality case is genuinely unsolvable, so
# borderline cases must surface as violations, not pass silently.
REL_TOL = 1e-9


# =============================================================================
# boundary data
# =============================================================================

@dataclass(frozen=True)
class ArcCondition:
    """Condition on one boundary arc: +inf, -inf, or finite sampled data."""

    kind: str
    value: object = None  # scalar, callable (x, y) -> value, or per-vertex dict

    def __post_init__(self):
        if self.kind not in (PLUS_INF, MINUS_INF, FINITE):
            raise ValueError(f"unknown condition kind {self.kind!r}")


def plus_inf() -> ArcCondition:
    return ArcCondition(PLUS_INF)


def minus_inf() -> ArcCondition:
    return ArcCondition(MINUS_INF)


def finite(value=0.0) -> ArcCondition:
    return ArcCondition(FINITE, value)


@dataclass(frozen=True)
class BoundaryData:
    """Per-arc boundary conditions, keyed by the arc labels of a domain."""

    conditions: dict

    def condition(self, label: str) -> ArcCondition:
        return self.conditions[label]

    def labels(self, kind: str) -> list[str]:
        return [lab for lab, c in self.conditions.items() if c.kind == kind]

    @property
    def c_empty(self) -> bool:
        return not self.labels(FINITE)

    def validate(self, dom: MultiDomain):
        """Every arc labeled; infinite data only on straight edges."""
        arc_labels = {a.label for a in dom.boundary_arcs}
        have = set(self.conditions)
        if arc_labels != have:
            raise ValueError(
                f"boundary data does not match arcs (missing {arc_labels - have}, "
                f"unknown {have - arc_labels})")
        for lab, cond in self.conditions.items():
            if cond.kind in (PLUS_INF, MINUS_INF) and not dom.arc_is_straight(lab):
                raise ValueError(
                    f"infinite data on arc {lab!r}, which is not a straight edge")

    def swapped(self) -> "BoundaryData":
        """Exchange the roles of +inf and -inf arcs."""
        flip = {PLUS_INF: MINUS_INF, MINUS_INF: PLUS_INF, FINITE: FINITE}
        return BoundaryData({lab: ArcCondition(flip[c.kind], c.value)
                             for lab, c in self.conditions.items()})


# =============================================================================
# chords and subdomains
# =============================================================================

@dataclass(frozen=True)
class Chord:
    """Straight connection between two domain vertices.

    Boundary chords run along a straight boundary arc (or the piece of it
    between consecutive domain vertices); interior chords are geodesic
    segments traced through the triangulation.
    """

    u: int
    v: int
    length: float
    arc_label: str | None = None       # set for boundary chords
    edges: tuple | None = None         # boundary edges covered, for boundary chords
    trace: ChordTrace | None = None    # set for interior chords

    @property
    def is_boundary(self) -> bool:
        return self.arc_label is not None

    def other(self, w: int) -> int:
        return self.v if w == self.u else self.u


@dataclass
class PolygonalSubdomain:
    """Closed straight-edged cycle through domain vertices, bounding in Omega."""

    corner_ids: list[int]
    chords: list[Chord]
    polygon: np.ndarray            # developed corner positions, ccw
    covered_arcs: list[str]        # boundary arcs contained in the cycle
    gamma: float
    alpha: float = 0.0
    beta: float = 0.0
    is_whole_domain: bool = False

    def arc_lengths(self, dom: MultiDomain) -> dict:
        return {lab: dom.arc_length(lab) for lab in self.covered_arcs}

    def describe(self) -> dict:
        return {
            "corners": [int(c) for c in self.corner_ids],
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "is_whole_domain": self.is_whole_domain,
        }


@dataclass
class SolvabilityVerdict:
    """Outcome of the solvability check, with a violating witness if any."""

    status: str  # "solvable" | "solvable_up_to_constant" | "unsolvable"
    witness: PolygonalSubdomain | None = None
    n_subdomains: int = 0

    @property
    def ok(self) -> bool:
        return self.status in ("solvable", "solvable_up_to_constant")

    def describe(self) -> dict:
        out = {"status": self.status, "n_subdomains": self.n_subdomains}
        if self.witness is not None:
            out["witness"] = self.witness.describe()
        return out


def _boundary_chords(dom: MultiDomain) -> list[Chord]:
    """One chord per straight boundary arc between consecutive domain vertices.

    Arcs with interior domain vertices are split at them.
    """
    dv = set(dom.domain_vertices)
    chords = []
    for arc in dom.boundary_arcs:
        chain = arc.vertices
        stops = [0] + [i for i in range(1, len(chain) - 1) if chain[i] in dv] \
            + [len(chain) - 1]
        for s0, s1 in zip(stops[:-1], stops[1:]):
            piece = chain[s0:s1 + 1]
            if len(piece) < 2:
                continue
            if not _chain_is_straight(dom, piece):
                continue
            length = sum(dom.edge_length(a, b) for a, b in zip(piece[:-1], piece[1:]))
            edges = tuple(zip(piece[:-1], piece[1:]))
            chords.append(Chord(piece[0], piece[-1], length,
                                arc_label=arc.label, edges=edges))
    return chords


def _chain_is_straight(dom: MultiDomain, chain, tol=1e-9) -> bool:
    p = dom.points
    d = p[chain[-1]] - p[chain[0]]
    nrm = float(np.linalg.norm(d))
    if nrm == 0:
        return False
    return all(abs((d[0] * (p[v][1] - p[chain[0]][1])
                    - d[1] * (p[v][0] - p[chain[0]][0])) / nrm) <= tol * nrm
               for v in chain[1:-1])


def enumerate_polygonal_subdomains(dom: MultiDomain, data: BoundaryData | None = None,
                                   max_vertices: int = MAX_DOMAIN_VERTICES
                                   ) -> list[PolygonalSubdomain]:
    """All polygonal subdomains with corners drawn from the domain vertices.

    Exhaustive cycle search over the chord graph.  A cycle qualifies when
    it is vertex-simple, does not cross itself inside the surface, and
    bounds a region of Omega whose boundary is exactly the cycle (no
    uncovered boundary edge may fall inside).  Interior chords passing
    through a third domain vertex are discarded; the subdomain they would
    bound is produced by the fuller cycle through that vertex, so this
    rule is what deduplicates congruent subdomains.
    """
    dv = list(dom.domain_vertices)
    if len(dv) > max_vertices:
        raise TooManyVertices(
            f"{len(dv)} domain vertices exceeds the exhaustive cap {max_vertices}")

    chords = {}
    for ch in _boundary_chords(dom):
        chords[_key(ch.u, ch.v)] = ch
    for i, u in enumerate(dv):
        for v in dv[i + 1:]:
            if _key(u, v) in chords:
                continue
            tr = trace_chord(dom, u, v, forbidden_vertices=dv)
            if tr is not None:
                chords[_key(u, v)] = Chord(u, v, tr.length, trace=tr)

    adj: dict[int, list[int]] = {v: [] for v in dv}
    for (u, v) in chords:
        adj[u].append(v)
        adj[v].append(u)
    for v in adj:
        adj[v].sort()

    subs = []
    for cycle in _simple_cycles(dv, adj):
        sub = _qualify_cycle(dom, cycle, chords)
        if sub is not None:
            subs.append(sub)

    if data is not None:
        data.validate(dom)
        a_set = set(data.labels(PLUS_INF))
        b_set = set(data.labels(MINUS_INF))
        for sub in subs:
            sub.alpha = sum(ch.length for ch in sub.chords
                            if ch.is_boundary and ch.arc_label in a_set)
            sub.beta = sum(ch.length for ch in sub.chords
                           if ch.is_boundary and ch.arc_label in b_set)
    subs.sort(key=lambda s: (len(s.corner_ids), sorted(s.corner_ids)))
    return subs


def _key(u, v):
    return (u, v) if u < v else (v, u)


def _simple_cycles(vertices, adj):
    """Vertex-simple cycles of length >= 3, each reported once.

    Every cycle is rooted at its smallest vertex and canonicalized by
    requiring the second vertex id below the last.
    """
    cycles = []
    for start in sorted(vertices):
        stack = [(start, (start,), frozenset((start,)))]
        while stack:
            node, path, seen = stack.pop()
            for nxt in adj[node]:
                if nxt == start and len(path) >= 3:
                    if path[1] < path[-1]:
                        cycles.append(list(path))
                elif nxt not in seen and nxt > start:
                    stack.append((nxt, path + (nxt,), seen | {nxt}))
    return cycles


def _qualify_cycle(dom: MultiDomain, cycle, chords) -> PolygonalSubdomain | None:
    n = len(cycle)
    cyc_chords = [chords[_key(cycle[i], cycle[(i + 1) % n])] for i in range(n)]
    covered_edges = set()
    for ch in cyc_chords:
        if ch.is_boundary:
            covered_edges.update(ch.edges)
    all_boundary = set(dom.boundary_cycle())
    whole = covered_edges == all_boundary

    gamma = sum(ch.length for ch in cyc_chords)
    covered = sorted({ch.arc_label for ch in cyc_chords if ch.is_boundary})
    if whole:
        # the domain itself qualifies whenever its boundary is all edges
        return PolygonalSubdomain(
            corner_ids=[int(c) for c in cycle], chords=cyc_chords,
            polygon=np.asarray(dom.points[cycle], float),
            covered_arcs=covered, gamma=float(gamma), is_whole_domain=True)

    # no crossings inside the surface (boundary chords cannot cross anything
    # away from their endpoints; interior chords are compared piecewise)
    interior = [(i, ch) for i, ch in enumerate(cyc_chords) if not ch.is_boundary]
    for a in range(len(interior)):
        i, ch1 = interior[a]
        for b in range(a + 1, len(interior)):
            j, ch2 = interior[b]
            if abs(i - j) in (1, n - 1):
                continue  # consecutive chords only meet at the shared corner
            if chords_cross(dom, ch1.trace, ch2.trace):
                return None

    polygon = dom.points[cycle]
    area = polygon_area(polygon)
    scale = max(float(np.abs(polygon).max()), 1.0)
    if abs(area) < 1e-12 * scale * scale:
        return None
    if area < 0:
        cycle = [cycle[0]] + cycle[1:][::-1]
        cyc_chords = [chords[_key(cycle[i], cycle[(i + 1) % n])] for i in range(n)]
        polygon = dom.points[cycle]

    # the enclosed region's boundary must be exactly the cycle: no boundary
    # edge outside the cycle may fall strictly inside the polygon
    p = dom.points
    for (a, b) in all_boundary - covered_edges:
        mid = 0.5 * (p[a] + p[b])
        if point_in_polygon(mid, polygon) == 1:
            return None

    return PolygonalSubdomain(
        corner_ids=[int(c) for c in cycle],
        chords=cyc_chords,
        polygon=np.asarray(polygon, float),
        covered_arcs=covered,
        gamma=float(gamma),
        is_whole_domain=False,
    )


# =============================================================================
# the solvability decision
# =============================================================================

def check_solvability(dom: MultiDomain, data: BoundaryData,
                      max_vertices: int = MAX_DOMAIN_VERTICES) -> SolvabilityVerdict:
    """Decide solvability of the infinite-data Dirichlet problem.

    With finite arcs present, a unique solution exists iff every polygonal
    subdomain satisfies 2 alpha < gamma and 2 beta < gamma.  With no
    finite arcs, existence (up to one additive constant) requires
    alpha = beta on the whole domain and the strict inequalities on every
    proper subdomain.  The strict inequalities are evaluated with relative
    slack: a violation is declared when 2 alpha >= gamma (1 - 1e-9), so
    the genuinely unsolvable equality case surfaces instead of passing on
    rounding.
    """
    data.validate(dom)
    subs = enumerate_polygonal_subdomains(dom, data, max_vertices=max_vertices)
    c_empty = data.c_empty

    worst = None
    worst_excess = -np.inf
    for sub in subs:
        if c_empty and sub.is_whole_domain:
            excess = abs(sub.alpha - sub.beta) / sub.gamma - REL_TOL
        else:
            excess = max(2 * sub.alpha - sub.gamma * (1 - REL_TOL),
                         2 * sub.beta - sub.gamma * (1 - REL_TOL)) / sub.gamma
        if excess >= 0 and excess > worst_excess:
            worst = sub
            worst_excess = excess

    if worst is not None:
        return SolvabilityVerdict("unsolvable", witness=worst, n_subdomains=len(subs))
    if c_empty:
        if not any(s.is_whole_domain for s in subs):
            # all-infinite data on a domain that is not itself polygonal
            # cannot balance (alpha = beta is unverifiable): refuse
            return SolvabilityVerdict("unsolvable", witness=None,
                                      n_subdomains=len(subs))
        return SolvabilityVerdict("solvable_up_to_constant", n_subdomains=len(subs))
    return SolvabilityVerdict("solvable", n_subdomains=len(subs))
