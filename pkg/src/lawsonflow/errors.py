"""Exception hierarchy. Every failure the library signals derives from LawsonFlowError."""


class LawsonFlowError(Exception):
    pass


class ConstraintError(LawsonFlowError):
    """Inputs violate a structural or ordering constraint (CLI exit code 2)."""


class NumericalError(LawsonFlowError):
    """A numerical procedure failed (CLI exit code 3)."""


class DimensionError(ConstraintError):
    pass


class ParameterError(ConstraintError):
    pass


class ParameterClash(ConstraintError):
    pass


class ConstraintViolation(ConstraintError):
    pass


class ParseError(ConstraintError):
    pass


class DomainError(ConstraintError):
    pass


class ExponentInfeasible(ConstraintError, UserWarning):
    """Raised or warned when a weight exponent misses the feasibility range."""


class VersionMismatch(ConstraintError):
    pass


class NonConvergence(NumericalError):
    pass


class IntegrationBlowup(NumericalError):
    pass


class ChartFold(NumericalError):
    pass


class FitDegenerate(NumericalError):
    pass


class MeshTooCoarse(NumericalError):
    pass


class ConeBreach(NumericalError):
    pass


class SolveFailure(NumericalError):
    pass


class TipCollapse(NumericalError):
    pass


class CurveDegenerate(NumericalError):
    pass


class BlendFailure(NumericalError):
    pass


class OverlapMismatch(NumericalError):
    pass


class ChartCoverage(NumericalError):
    pass


class RootFindStall(NumericalError):
    pass


class DenominatorBreach(NumericalError):
    pass


class WindowUncovered(NumericalError):
    pass


class SpanTooShort(NumericalError):
    pass


class PersistError(LawsonFlowError):
    """Run directory could not be written or read."""
