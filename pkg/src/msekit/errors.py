"""Exception hierarchy for msekit.

Mathematical verdicts (Unsolvable, NoDivergence on a convergent sequence)
are data, not failures; exceptions are reserved for contract violations,
bad inputs, and numerical breakdowns.
"""


class MsekitError(Exception):
    """Base class for all msekit errors."""


# -- flat geometry ------------------------------------------------------------

class NotSimplyConnected(MsekitError):
    """Triangulation does not have Euler characteristic 1."""


class NonConvexArc(MsekitError):
    """A smooth boundary arc bends away from the domain interior."""

    def __init__(self, msg, edge_pair=None):
        super().__init__(msg)
        self.edge_pair = edge_pair


class InconsistentIsometry(MsekitError):
    """Chart coordinates and transition isometries do not glue flat."""


class DegeneratePolygon(MsekitError):
    """Fewer than three corners, or a zero-length side."""


class UnbalancedFlux(MsekitError):
    """Flux vectors do not sum to zero."""


class SelfIntersecting(MsekitError):
    """Polygon boundary crosses itself; supply an immersed disk explicitly."""


# -- solvability check --------------------------------------------------------

class TooManyVertices(MsekitError):
    """Domain vertex count exceeds the exhaustive-enumeration cap."""


# -- solver -------------------------------------------------------------------

class NonConvergence(MsekitError):
    """Newton iteration did not reach tolerance; carries the last iterate."""

    def __init__(self, msg, solution=None, residual=None, trace=None):
        super().__init__(msg)
        self.solution = solution
        self.residual = residual
        self.trace = trace or []


class UnsolvableConfiguration(MsekitError):
    """Infinite boundary data fails the solvability conditions."""

    def __init__(self, msg, verdict=None):
        super().__init__(msg)
        self.verdict = verdict


class OutOfDomain(MsekitError):
    """Point outside the domain of a closed-form solution."""


class EstimateViolated(MsekitError):
    """A gradient or curvature estimate failed on some triangle."""

    def __init__(self, msg, triangle=None, value=None, bound=None):
        super().__init__(msg)
        self.triangle = triangle
        self.value = value
        self.bound = bound


# -- conjugation --------------------------------------------------------------

class ClosednessViolation(MsekitError):
    """A discrete 1-form has loop integrals far above the discretization bound."""


class PeriodViolation(MsekitError):
    """Conjugate coordinate differentials are not closed within tolerance."""


class NonPlanarBoundary(MsekitError):
    """No boundary curve lies within tolerance of the symmetry plane."""


# -- divergence scan ----------------------------------------------------------

class TooShortSequence(MsekitError):
    """Divergence analysis needs at least three solutions."""


class NoDivergence(MsekitError):
    """Every analyzed vertex has bounded gradient; nothing to fit."""


# -- r-noid pipeline ----------------------------------------------------------

class SolvabilityFailure(MsekitError):
    """An exhaustion level fails the solvability gate."""

    def __init__(self, msg, level=None, verdict=None):
        super().__init__(msg)
        self.level = level
        self.verdict = verdict


class DivergenceDetected(MsekitError):
    """The exhaustion sequence diverges on the disk; bad configuration or mesh."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class FluxMismatch(MsekitError):
    """Measured end fluxes deviate from their targets beyond tolerance."""

    def __init__(self, msg, measured=None, targets=None):
        super().__init__(msg)
        self.measured = measured
        self.targets = targets


# -- CLI ----------------------------------------------------------------------

class SchemaError(MsekitError):
    """Problem specification violates the schema."""

    def __init__(self, msg, field=None):
        super().__init__(msg)
        self.field = field


class IoError(MsekitError):
    """Problem file unreadable or artifact unwritable."""
