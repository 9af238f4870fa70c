"""Variational solver for the minimal surface equation on multi-domains.

The graph of u over a flat domain has area  sum_T |T| W_T  with
W = sqrt(1 + p^2 + q^2) and (p, q) the gradient of the piecewise linear
interpolant in developed coordinates.  The functional is smooth and
strictly convex in the gradient, so a damped Newton iteration with
backtracking line search converges from any initial guess; the harmonic
extension of the boundary data is used as a cheap starting point.

Infinite boundary values are realized by a ramp: the +inf/-inf edges get
substituted levels +-M from an increasing schedule, and the family of
solutions is analyzed as a sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import EstimateViolated, NonConvergence, OutOfDomain, UnsolvableConfiguration
from .flatgeom import MultiDomain
from .jscheck import (
    FINITE,
    MINUS_INF,
    PLUS_INF,
    BoundaryData,
    check_solvability,
)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200


# =============================================================================
# closed forms
# =============================================================================

def scherk_exact(x, y):
    """Scherk's doubly periodic graph - ln cos x + ln cos y on its fundamental square.

    Solves the minimal surface equation exactly; goes to +inf on the
    vertical sides x = +-pi/2 and -inf on the horizontal sides.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cx = np.cos(x)
    cy = np.cos(y)
    if np.any(cx <= 0) or np.any(cy <= 0):
        raise OutOfDomain("scherk_exact needs cos x > 0 and cos y > 0")
    out = -np.log(cx) + np.log(cy)
    return out if out.ndim else float(out)


# =============================================================================
# solutions
# =============================================================================

@dataclass(frozen=True)
class RampSchedule:
    """Increasing levels substituted for +-infinity boundary labels."""

    levels: tuple

    def __post_init__(self):
        lv = tuple(float(m) for m in self.levels)
        object.__setattr__(self, "levels", lv)
        if len(lv) < 3:
            raise ValueError("ramp needs at least three levels")
        if any(b <= a for a, b in zip(lv[:-1], lv[1:])):
            raise ValueError("ramp levels must be strictly increasing")

    @property
    def top(self) -> float:
        return self.levels[-1]


@dataclass
class NewtonTrace:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)


@dataclass
class DiscreteSolution:
    """Piecewise linear graph over a multi-domain.

    u is per vertex; grad holds the constant (p, q) of each triangle in
    developed coordinates and w = sqrt(1 + p^2 + q^2).
    """

    domain: MultiDomain
    u: np.ndarray
    grad: np.ndarray           # (m, 2)
    w: np.ndarray              # (m,)
    ramp_level: float | None = None
    trace: NewtonTrace | None = None
    fixed_mask: np.ndarray | None = None

    def energy(self) -> float:
        return float((self.domain.tri_areas * self.w).sum())

    def shifted(self, c: float) -> "DiscreteSolution":
        return DiscreteSolution(self.domain, self.u + c, self.grad.copy(),
                                self.w.copy(), self.ramp_level, self.trace,
                                self.fixed_mask)

    def second_derivatives(self, vertices=None) -> np.ndarray:
        """Per-vertex (r, s, t) = (u_xx, u_xy, u_yy) by local quadratic fit.

        Least squares over the two-ring of each vertex; rows with too few
        neighbors (tiny meshes) fall back to the one-ring system.
        """
        dom = self.domain
        if vertices is None:
            vertices = range(dom.n_vertices)
        nbr = [set() for _ in range(dom.n_vertices)]
        for (a, b) in dom.edge_tris:
            nbr[a].add(b)
            nbr[b].add(a)
        out = np.zeros((dom.n_vertices, 3))
        p = dom.points
        for v in vertices:
            ring = set(nbr[v])
            for w_ in list(ring):
                ring |= nbr[w_]
            ring.discard(v)
            ring = sorted(ring)
            d = p[ring] - p[v]
            rhs = self.u[ring] - self.u[v]
            cols = np.column_stack([
                d[:, 0], d[:, 1],
                0.5 * d[:, 0] ** 2, d[:, 0] * d[:, 1], 0.5 * d[:, 1] ** 2,
            ])
            coef, *_ = np.linalg.lstsq(cols, rhs, rcond=None)
            out[v] = coef[2:5]
        return out


def solution_from_values(dom: MultiDomain, u, ramp_level=None) -> DiscreteSolution:
    """Wrap per-vertex values into a DiscreteSolution (gradients recomputed)."""
    u = np.asarray(u, dtype=float)
    g = _shape_gradients(dom)
    grad = np.einsum("mld,ml->md", g, u[dom.triangles])
    w = np.sqrt(1.0 + (grad ** 2).sum(axis=1))
    return DiscreteSolution(dom, u, grad, w, ramp_level=ramp_level)


# =============================================================================
# assembly
# =============================================================================

def _shape_gradients(dom: MultiDomain) -> np.ndarray:
    """Gradients of the linear shape functions, (m, 3, 2)."""
    p = dom.points[dom.triangles]
    g = np.empty_like(p)
    for loc in range(3):
        e = p[:, (loc + 2) % 3] - p[:, (loc + 1) % 3]
        g[:, loc, 0] = -e[:, 1]
        g[:, loc, 1] = e[:, 0]
    return g / (2.0 * dom.tri_areas)[:, None, None]


def area_energy(dom: MultiDomain, u) -> float:
    """Discrete graph area  sum_T |T| sqrt(1 + |grad u|^2)."""
    g = _shape_gradients(dom)
    grad = np.einsum("mld,ml->md", g, np.asarray(u, float)[dom.triangles])
    return float((dom.tri_areas * np.sqrt(1.0 + (grad ** 2).sum(axis=1))).sum())


def _resolve_values_arg(dom: MultiDomain, values) -> np.ndarray:
    """Normalize the Dirichlet-data argument to a full vector with NaN free."""
    n = dom.n_vertices
    if callable(values):
        full = np.full(n, np.nan)
        bnd = np.nonzero(dom.is_boundary_vertex)[0]
        full[bnd] = [values(*dom.points[v]) for v in bnd]
        return full
    if isinstance(values, dict):
        full = np.full(n, np.nan)
        for v, val in values.items():
            full[int(v)] = float(val)
        return full
    full = np.asarray(values, dtype=float).copy()
    if full.shape != (n,):
        raise ValueError(f"values must have shape ({n},)")
    return full


def harmonic_extension(dom: MultiDomain, values) -> np.ndarray:
    """Solve the linear Dirichlet problem (quadratic area approximation)."""
    full = _resolve_values_arg(dom, values)
    fixed = ~np.isnan(full)
    if not fixed[dom.is_boundary_vertex].all():
        raise ValueError("every boundary vertex needs a Dirichlet value")
    g = _shape_gradients(dom)
    a = dom.tri_areas
    tris = dom.triangles
    blocks = np.einsum("mid,mjd->mij", g, g) * a[:, None, None]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    k = sp.coo_matrix((blocks.ravel(), (rows, cols)),
                      shape=(dom.n_vertices, dom.n_vertices)).tocsr()
    free = np.nonzero(~fixed)[0]
    fixed_idx = np.nonzero(fixed)[0]
    u = full.copy()
    u[free] = 0.0
    if len(free):
        k_ff = k[free][:, free].tocsc()
        rhs = -k[free][:, fixed_idx] @ full[fixed_idx]
        u[free] = splu(k_ff).solve(rhs)
    return u


def solve_dirichlet(dom: MultiDomain, values, *, tol: float = NEWTON_TOL,
                    max_iter: int = NEWTON_MAX_ITER, x0=None,
                    ramp_level=None) -> DiscreteSolution:
    """Minimize the discrete area over piecewise linear graphs.

    `values` pins every boundary vertex (dict, full array with NaN marking
    free vertices, or a callable of the developed coordinates).  Newton
    steps are damped by an Armijo backtracking line search, so the energy
    strictly decreases on every accepted step; convergence is declared
    when the Newton decrement sqrt(g' H^-1 g), the first-order optimality
    residual in the energy norm, falls below `tol`.

    Raises NonConvergence (carrying the last iterate and its residual)
    when `max_iter` is exhausted.
    """
    full = _resolve_values_arg(dom, values)
    fixed = ~np.isnan(full)
    if not fixed[dom.is_boundary_vertex].all():
        raise ValueError("every boundary vertex needs a Dirichlet value")

    tris = dom.triangles
    areas = dom.tri_areas
    g = _shape_gradients(dom)
    free = np.nonzero(~fixed)[0]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = dom.n_vertices

    if x0 is not None:
        u = np.asarray(x0, dtype=float).copy()
        u[fixed] = full[fixed]
    else:
        u = harmonic_extension(dom, full)

    def fields(uu):
        grad = np.einsum("mld,ml->md", g, uu[tris])
        w = np.sqrt(1.0 + (grad ** 2).sum(axis=1))
        return grad, w

    def energy(uu):
        grad, w = fields(uu)
        return float((areas * w).sum())

    trace = NewtonTrace()
    e_cur = energy(u)
    # the Newton decrement has energy units; measuring it against the
    # total energy keeps the criterion meaningful when ramped data makes
    # the functional large (the absolute decrement then sits below the
    # float64 granularity of the energy itself)
    tol_eff = tol * max(1.0, abs(e_cur))
    for it in range(max_iter):
        grad, w = fields(u)
        gu = np.einsum("mld,md->ml", g, grad)          # (grad u . grad lambda_i)
        resid = np.zeros(n)
        np.add.at(resid, tris.ravel(), (gu * (areas / w)[:, None]).ravel())

        if len(free) == 0:
            trace.iterations = it
            break

        gg = np.einsum("mid,mjd->mij", g, g)
        blocks = (gg / w[:, None, None]
                  - np.einsum("mi,mj->mij", gu, gu) / (w ** 3)[:, None, None])
        blocks *= areas[:, None, None]
        hess = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        h_ff = hess[free][:, free].tocsc()
        r_f = resid[free]
        step = splu(h_ff).solve(r_f)
        dec2 = float(r_f @ step)
        dec = np.sqrt(max(dec2, 0.0))
        trace.residuals.append(dec)
        trace.energies.append(e_cur)
        if dec <= tol_eff:
            trace.iterations = it
            break

        alpha = 1.0
        accepted = False
        for _ in range(60):
            u_try = u.copy()
            u_try[free] -= alpha * step
            e_try = energy(u_try)
            if e_try <= e_cur - 1e-4 * alpha * dec2:
                u, e_cur = u_try, e_try
                accepted = True
                break
            alpha *= 0.5
        trace.step_sizes.append(alpha)
        if not accepted:
            # energy flat at machine precision: treat as converged stall
            trace.iterations = it + 1
            grad, w = fields(u)
            if dec <= 1e4 * tol_eff:
                break
            sol = DiscreteSolution(dom, u, grad, w, ramp_level, trace, fixed)
            raise NonConvergence("line search stalled", solution=sol,
                                 residual=dec, trace=trace.residuals)
    else:
        grad, w = fields(u)
        sol = DiscreteSolution(dom, u, grad, w, ramp_level, trace, fixed)
        raise NonConvergence(
            f"no convergence in {max_iter} Newton iterations "
            f"(residual {trace.residuals[-1]:.3e})",
            solution=sol, residual=trace.residuals[-1], trace=trace.residuals)

    grad, w = fields(u)
    return DiscreteSolution(dom, u, grad, w, ramp_level, trace, fixed)


# =============================================================================
# infinite boundary data via ramps
# =============================================================================

def resolve_boundary_values(dom: MultiDomain, data: BoundaryData, level: float):
    """Per-boundary-vertex Dirichlet values at one ramp level.

    Arc-interior vertices take +level / -level / the finite data.  A
    corner shared with a finite arc takes the finite value (corners are
    negligible for the variational problem, and finite data is the data
    actually attained); a corner where +inf meets -inf takes 0.
    """
    data.validate(dom)
    proposals: dict[int, list] = {}
    for arc in dom.boundary_arcs:
        cond = data.condition(arc.label)
        chain = arc.vertices
        for v in chain:
            proposals.setdefault(int(v), [])
        if cond.kind == PLUS_INF:
            for v in chain:
                proposals[int(v)].append(("inf", +float(level)))
        elif cond.kind == MINUS_INF:
            for v in chain:
                proposals[int(v)].append(("inf", -float(level)))
        else:
            for v in chain:
                proposals[int(v)].append(("fin", _finite_value(dom, cond.value, v)))

    values = {}
    for v, props in proposals.items():
        fin = [val for kind, val in props if kind == "fin"]
        if fin:
            values[v] = float(np.mean(fin))
        else:
            inf_vals = sorted({val for _, val in props})
            values[v] = 0.0 if len(inf_vals) > 1 else inf_vals[0]
    return values


def _finite_value(dom, value, v):
    if callable(value):
        return float(value(*dom.points[v]))
    if isinstance(value, dict):
        return float(value[v])
    return float(value)


def solve_infinite(dom: MultiDomain, data: BoundaryData, ramp: RampSchedule,
                   anchor: int | None = None, *, tol: float = NEWTON_TOL,
                   max_iter: int = NEWTON_MAX_ITER, check: bool = True,
                   verdict=None) -> list[DiscreteSolution]:
    """Solve the ramped approximations of the infinite-data problem.

    Runs the solvability check first and refuses unsolvable
    configurations.  Returns one solution per ramp level; when there are
    no finite arcs each solution is normalized to u(anchor) = 0 (the
    continuum solution is then only unique up to an additive constant).
    Each solve warm-starts from the previous level.
    """
    if check and verdict is None:
        verdict = check_solvability(dom, data)
    if verdict is not None and not verdict.ok:
        raise UnsolvableConfiguration(
            f"configuration is {verdict.status}", verdict=verdict)

    if anchor is None:
        anchor = int(dom.interior_vertices()[0]) if len(dom.interior_vertices()) \
            else 0
    sols = []
    prev = None
    for m in ramp.levels:
        values = resolve_boundary_values(dom, data, m)
        x0 = None
        if prev is not None:
            x0 = prev.u.copy()
        sol = solve_dirichlet(dom, values, tol=tol, max_iter=max_iter,
                              x0=x0, ramp_level=m)
        if data.c_empty:
            # vertical shifts leave the gradient field untouched
            sol = DiscreteSolution(dom, sol.u - sol.u[anchor], sol.grad, sol.w,
                                   m, sol.trace, sol.fixed_mask)
        sols.append(sol)
        prev = sol
    return sols


# =============================================================================
# sector and strip diagnostics
# =============================================================================

def sector_bounds_check(sols: list[DiscreteSolution], alpha: float,
                        stability: float = 0.05) -> dict:
    """Empirical one-sided bounds near a sector vertex.

    For solutions of the +inf/-inf sector problem, reports the supremum
    of u over the inner quarter-radius region on the -inf side of the
    radius L(alpha) and the infimum over the +inf side, and checks they
    are stable (relative change below `stability`) across the top two
    ramp levels.
    """
    dom = sols[-1].domain
    polar = dom.meta["polar"]
    _, beta1, beta2, radius = dom.meta["shape"]
    if not (beta1 < alpha < beta2):
        raise ValueError("alpha must lie strictly between the sector angles")
    r = polar[:, 0]
    th = polar[:, 1]

    upper = (r <= radius / 4 + 1e-12) & (th >= alpha - 1e-12)   # contains L(beta2)
    lower = (r <= radius / 4 + 1e-12) & (th <= alpha + 1e-12)   # contains L(beta1)

    def bounds(sol):
        return float(sol.u[upper].max()), float(sol.u[lower].min())

    m_top, mp_top = bounds(sols[-1])
    m_prev, mp_prev = bounds(sols[-2])
    scale = max(abs(m_top), abs(mp_top), 1e-9)
    report = {
        "alpha": float(alpha),
        "sup_upper": m_top,
        "inf_lower": mp_top,
        "sup_upper_prev": m_prev,
        "inf_lower_prev": mp_prev,
        "sup_change": abs(m_top - m_prev) / scale,
        "inf_change": abs(mp_top - mp_prev) / scale,
    }
    report["stable"] = (report["sup_change"] <= stability
                        and report["inf_change"] <= stability)
    return report


def strip_gradient_check(sol: DiscreteSolution, width: float, *,
                         x_min_factor: float = 4.0, raise_on_violation: bool = True
                         ) -> dict:
    """Far-strip gradient estimates for the +-inf strip problem.

    On a strip of width a whose two long sides carry +inf and -inf, at
    distance x >= 4a from the finite end the normal turns horizontal at
    rate 1/x:

        |p|/W <= sqrt(2) a / x,      |q|/W >= 1 - a^2 / x^2,

    with p along the strip and q across.  The discrete check allows
    eps_h = 10 h on both (the continuum estimates hold only up to
    discretization error).
    """
    dom = sol.domain
    a = float(width)
    h = dom.mesh_size()
    eps_h = 10.0 * h
    cents = dom.centroids()
    x = cents[:, 0]
    mask = x >= x_min_factor * a
    p_ratio = np.abs(sol.grad[:, 0]) / sol.w
    q_ratio = np.abs(sol.grad[:, 1]) / sol.w
    p_bound = np.sqrt(2.0) * a / x + eps_h
    q_bound = 1.0 - a ** 2 / x ** 2 - eps_h

    p_excess = np.where(mask, p_ratio - p_bound, -np.inf)
    q_deficit = np.where(mask, q_bound - q_ratio, -np.inf)
    worst_p = int(np.argmax(p_excess))
    worst_q = int(np.argmax(q_deficit))
    report = {
        "checked": int(mask.sum()),
        "eps_h": eps_h,
        "p_violations": int((p_excess > 0).sum()),
        "q_violations": int((q_deficit > 0).sum()),
        "worst_p_margin": float(p_excess[worst_p]),
        "worst_q_margin": float(q_deficit[worst_q]),
        "worst_p_triangle": worst_p,
        "worst_q_triangle": worst_q,
    }
    if raise_on_violation and (report["p_violations"] or report["q_violations"]):
        bad = worst_p if report["p_violations"] else worst_q
        raise EstimateViolated(
            f"strip gradient estimate violated on {report['p_violations']} +"
            f" {report['q_violations']} triangles (worst at {bad})",
            triangle=bad)
    return report
