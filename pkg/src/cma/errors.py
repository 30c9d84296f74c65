"""Exception hierarchy shared by every module."""


class CmaError(Exception):
    """Base class for all library errors."""


class NonPSD(CmaError):
    pass


class GridTooCoarse(CmaError):
    pass


class StencilIncomplete(CmaError):
    pass


class NegativeRhs(CmaError):
    pass


class NonMonotoneRhs(CmaError):
    pass


class NotPsh(CmaError):
    pass


class BoundaryOrderViolated(CmaError):
    pass


class BoundarySignViolation(CmaError):
    pass


class NotConvex(CmaError):
    pass


class NoWitness(CmaError):
    pass


class NoSubsolution(CmaError):
    pass


class BumpInvalid(CmaError):
    pass


class NoConvergence(CmaError):
    pass


class ConfigError(CmaError):
    """Invalid run configuration; ``issues`` holds line-anchored findings."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))
