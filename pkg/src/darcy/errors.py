"""Exception types raised across the package."""


class DarcyError(Exception):
    """Base class for all package errors."""


class ExpectedCountOverflow(DarcyError):
    pass


class DegenerateExponent(DarcyError):
    pass


class DegenerateAnnulus(DarcyError):
    pass


class QuadratureUnderResolved(DarcyError):
    pass


class UnderResolved(DarcyError):
    """Grid spacing too coarse for the smallest feature."""


class UnderResolvedBall(UnderResolved):
    pass


class UnderResolvedHole(UnderResolved):
    pass


class SolverDiverged(DarcyError):
    pass


class InadmissibleLaw(DarcyError):
    pass


class CellOverlap(DarcyError):
    pass


class HierarchyInfeasible(DarcyError):
    """Greedy cluster merging could not satisfy the hierarchy invariants.

    The offending group of ball indices is kept on ``group``.
    """

    def __init__(self, message, group=()):
        super().__init__(message)
        self.group = tuple(group)


class ConfigInvalid(DarcyError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class PipelineFailed(DarcyError):
    pass


class SchemaMismatch(DarcyError):
    pass
