"""Exception hierarchy shared by every module."""


class NBodyError(Exception):
    """Base class for all package errors."""


class SpecError(NBodyError, ValueError):
    pass


class NonPositiveMass(SpecError):
    pass


class BadPermutation(SpecError):
    pass


class SymmetryMassMismatch(SpecError):
    pass


class TooFewBodies(SpecError):
    pass


class CollisionConfiguration(NBodyError, ArithmeticError):
    """Raised when a quantity is evaluated exactly on the collision set."""


class BadMeshSize(NBodyError, ValueError):
    pass


class DimensionMismatch(NBodyError, ValueError):
    pass


class NegativeGap(NBodyError, ValueError):
    pass


class NonzeroPatternGap(NBodyError, ValueError):
    pass


class NotConverged(NBodyError, RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DegeneratePath(NBodyError, RuntimeError):
    pass


class NonRegularizableEvent(NBodyError, RuntimeError):
    def __init__(self, message, time=None, bodies=()):
        super().__init__(message)
        self.time = time
        self.bodies = tuple(bodies)


class StepFailure(NBodyError, RuntimeError):
    pass


class MeshTooCoarse(NBodyError, ValueError):
    pass


class ConfigError(NBodyError, ValueError):
    """Malformed or incomplete run configuration."""


class SolutionFormatError(NBodyError, ValueError):
    """Unreadable solution file or one written by another format version."""
